#include "fsgcd/encoder.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "fsgcd/error.hpp"
#include "fsgcd/parallel.hpp"

namespace fsgcd {

namespace {

TensorView view(const char* name, Matrix& m, bool trainable, bool decay) {
  return {name, m.data(), m.rows(), m.cols(), trainable, decay};
}

TensorView view(const char* name, Vector& v, bool trainable, bool decay) {
  return {name, v.data(), v.rows(), 1, trainable, decay};
}

TensorView view(const char* name, double& s, bool trainable, bool decay) {
  return {name, &s, 1, 1, trainable, decay};
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_mask(const Matrix& pre, const Matrix& grad) {
  return (pre.array() > 0.0).select(grad, 0.0);
}

}  // namespace

void EncoderShape::validate() const {
  require(input_dim >= 2, ErrorCode::InvalidArgument, "encoder input dimension must be >= 2");
  require(bottleneck_dim >= 1 && bottleneck_dim < input_dim, ErrorCode::InvalidArgument,
          "bottleneck dimension must satisfy 1 <= d_b < D (d_b=" + std::to_string(bottleneck_dim) +
              ", D=" + std::to_string(input_dim) + ")");
  require(head_hidden >= 1, ErrorCode::InvalidArgument, "head hidden width must be >= 1");
  require(embed_dim >= 2, ErrorCode::InvalidArgument, "embedding dimension must be >= 2");
}

std::vector<TensorView> EncoderParams::tensors() {
  return {
      view("adapter.w_down", w_down, true, true),
      view("adapter.w_up", w_up, true, true),
      view("adapter.ln.gain", ln_gain, true, false),
      view("adapter.ln.bias", ln_bias, true, false),
      view("head.w1", head_w1, true, true),
      view("head.b1", head_b1, true, true),
      view("head.w2", head_w2, true, true),
      view("head.b2", head_b2, true, true),
      view("adapter.scale", scale, train_scale, false),
      view("frozen_mlp.weight", frozen_mlp_w, false, false),
      view("frozen_mlp.bias", frozen_mlp_b, false, false),
      view("frozen_ln.gain", frozen_ln_gain, false, false),
      view("frozen_ln.bias", frozen_ln_bias, false, false),
  };
}

std::size_t EncoderParams::trainable_count() const {
  auto self = const_cast<EncoderParams*>(this);
  std::size_t n = 0;
  for (const auto& t : self->tensors())
    if (t.trainable) n += static_cast<std::size_t>(t.size());
  return n;
}

std::size_t EncoderParams::adapter_trainable_count() const {
  return static_cast<std::size_t>(w_down.size() + w_up.size() + ln_gain.size() + ln_bias.size()) +
         (train_scale ? 1 : 0);
}

bool EncoderParams::all_finite() const {
  auto self = const_cast<EncoderParams*>(this);
  for (const auto& t : self->tensors())
    for (Eigen::Index i = 0; i < t.size(); ++i)
      if (!std::isfinite(t.data[i])) return false;
  return std::isfinite(ln_eps);
}

void EncoderParams::validate() const {
  const auto d = w_down.rows();
  const auto db = w_down.cols();
  const auto h = head_w1.cols();
  bool ok = d >= 2 && db >= 1 && db < d && w_up.rows() == db && w_up.cols() == d && ln_gain.size() == d &&
            ln_bias.size() == d && head_w1.rows() == d && head_b1.size() == h && head_w2.rows() == h &&
            head_b2.size() == head_w2.cols() && head_w2.cols() >= 2 && frozen_mlp_w.rows() == d &&
            frozen_mlp_w.cols() == d && frozen_mlp_b.size() == d && frozen_ln_gain.size() == d &&
            frozen_ln_bias.size() == d;
  require(ok, ErrorCode::ShapeMismatch, "encoder parameter shapes are inconsistent");
  require(all_finite(), ErrorCode::NonFinite, "encoder parameters contain non-finite values");
  require(ln_eps >= 0.0, ErrorCode::InvalidArgument, "LayerNorm epsilon must be >= 0");
}

EncoderParams EncoderParams::rounded_to_f32() const {
  EncoderParams out = *this;
  for (auto& t : out.tensors())
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = static_cast<float>(t.data[i]);
  out.ln_eps = static_cast<float>(ln_eps);
  return out;
}

namespace {

// Orthonormal rows when rows <= cols, orthonormal columns otherwise.
Matrix orthonormal(Matrix m) {
  const bool wide = m.rows() <= m.cols();
  Matrix a = wide ? Matrix(m.transpose()) : m;
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
  // Fix column signs so the result is a deterministic function of m.
  const Matrix r = qr.matrixQR().topRows(a.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return wide ? Matrix(q.transpose()) : q;
}

}  // namespace

EncoderParams init_encoder(const EncoderShape& shape, std::uint64_t seed, double scale, HeadInit head_init) {
  shape.validate();
  const auto d = static_cast<Eigen::Index>(shape.input_dim);
  const auto db = static_cast<Eigen::Index>(shape.bottleneck_dim);
  const auto h = static_cast<Eigen::Index>(shape.head_hidden);
  const auto e = static_cast<Eigen::Index>(shape.embed_dim);

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols, double std) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * normal(rng);
    return m;
  };

  EncoderParams p;
  p.w_down = gaussian(d, db, 1.0 / std::sqrt(static_cast<double>(d)));
  p.w_up = Matrix::Zero(db, d);
  p.ln_gain = Vector::Ones(d);
  p.ln_bias = Vector::Zero(d);
  if (head_init == HeadInit::Mirrored) {
    require(h % 2 == 0, ErrorCode::InvalidArgument, "mirrored head init needs an even hidden width");
    const Matrix a = orthonormal(gaussian(d, h / 2, 1.0));
    const Matrix b = orthonormal(gaussian(h / 2, e, 1.0));
    p.head_w1.resize(d, h);
    p.head_w1 << a, -a;
    p.head_w2.resize(h, e);
    p.head_w2 << b, -b;
  } else {
    p.head_w1 = gaussian(d, h, std::sqrt(2.0 / static_cast<double>(d)));
    p.head_w2 = gaussian(h, e, 1.0 / std::sqrt(static_cast<double>(h)));
  }
  p.head_b1 = Vector::Zero(h);
  p.head_b2 = Vector::Zero(e);
  p.frozen_mlp_w = Matrix::Identity(d, d);
  p.frozen_mlp_b = Vector::Zero(d);
  p.frozen_ln_gain = Vector::Ones(d);
  p.frozen_ln_bias = Vector::Zero(d);
  p.scale = scale;
  return p;
}

EncoderGrads EncoderGrads::zeros_like(const EncoderParams& p) {
  EncoderGrads g;
  g.w_down = Matrix::Zero(p.w_down.rows(), p.w_down.cols());
  g.w_up = Matrix::Zero(p.w_up.rows(), p.w_up.cols());
  g.ln_gain = Vector::Zero(p.ln_gain.size());
  g.ln_bias = Vector::Zero(p.ln_bias.size());
  g.head_w1 = Matrix::Zero(p.head_w1.rows(), p.head_w1.cols());
  g.head_b1 = Vector::Zero(p.head_b1.size());
  g.head_w2 = Matrix::Zero(p.head_w2.rows(), p.head_w2.cols());
  g.head_b2 = Vector::Zero(p.head_b2.size());
  g.scale = 0.0;
  return g;
}

std::vector<TensorView> EncoderGrads::tensors(bool include_scale) {
  std::vector<TensorView> out = {
      view("adapter.w_down", w_down, true, true),
      view("adapter.w_up", w_up, true, true),
      view("adapter.ln.gain", ln_gain, true, false),
      view("adapter.ln.bias", ln_bias, true, false),
      view("head.w1", head_w1, true, true),
      view("head.b1", head_b1, true, true),
      view("head.w2", head_w2, true, true),
      view("head.b2", head_b2, true, true),
  };
  if (include_scale) out.push_back(view("adapter.scale", scale, true, false));
  return out;
}

EncoderGrads& EncoderGrads::operator+=(const EncoderGrads& o) {
  w_down += o.w_down;
  w_up += o.w_up;
  ln_gain += o.ln_gain;
  ln_bias += o.ln_bias;
  head_w1 += o.head_w1;
  head_b1 += o.head_b1;
  head_w2 += o.head_w2;
  head_b2 += o.head_b2;
  scale += o.scale;
  return *this;
}

bool EncoderGrads::all_finite() const {
  return w_down.allFinite() && w_up.allFinite() && ln_gain.allFinite() && ln_bias.allFinite() &&
         head_w1.allFinite() && head_b1.allFinite() && head_w2.allFinite() && head_b2.allFinite() &&
         std::isfinite(scale);
}

Matrix layer_norm_normalize(const Matrix& x, double eps) {
  const Vector mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  const Vector var = centered.array().square().rowwise().mean();
  const Vector inv_std = (var.array() + eps).rsqrt();
  return inv_std.asDiagonal() * centered;
}

namespace {

void check_input(const Matrix& inputs, const EncoderParams& p) {
  require(static_cast<std::size_t>(inputs.cols()) == p.input_dim(), ErrorCode::ShapeMismatch,
          "input dimension " + std::to_string(inputs.cols()) + " does not match encoder dimension " +
              std::to_string(p.input_dim()));
}

Matrix as_row(std::span<const double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
  return m;
}

void forward_into(EncodeCache& c, const EncoderParams& p) {
  const Matrix& v = c.inputs;
  c.adapter_norm = layer_norm_normalize(v, p.ln_eps);

  Matrix adapter_in = c.adapter_norm * p.ln_gain.asDiagonal();
  adapter_in.rowwise() += p.ln_bias.transpose();
  c.adapter_pre = adapter_in * p.w_down;
  c.adapter_act = relu(c.adapter_pre);
  c.adapter_out = c.adapter_act * p.w_up;

  Matrix frozen_in = c.adapter_norm * p.frozen_ln_gain.asDiagonal();
  frozen_in.rowwise() += p.frozen_ln_bias.transpose();
  Matrix frozen_out = frozen_in * p.frozen_mlp_w;
  frozen_out.rowwise() += p.frozen_mlp_b.transpose();

  c.block_out = frozen_out + v + p.scale * c.adapter_out;

  c.hidden_pre = c.block_out * p.head_w1;
  c.hidden_pre.rowwise() += p.head_b1.transpose();
  c.hidden_act = relu(c.hidden_pre);
  c.head_out = c.hidden_act * p.head_w2;
  c.head_out.rowwise() += p.head_b2.transpose();
  c.head_norm = c.head_out.rowwise().norm();
  for (Eigen::Index i = 0; i < c.head_norm.size(); ++i)
    require(c.head_norm[i] > 0.0 && std::isfinite(c.head_norm[i]), ErrorCode::Degenerate,
            "projection head output has zero or non-finite norm at row " + std::to_string(i));
  c.embeddings = c.head_norm.cwiseInverse().asDiagonal() * c.head_out;
}

}  // namespace

Matrix adapter_forward(const Matrix& inputs, const EncoderParams& p) {
  check_input(inputs, p);
  const Matrix norm = layer_norm_normalize(inputs, p.ln_eps);
  Matrix adapter_in = norm * p.ln_gain.asDiagonal();
  adapter_in.rowwise() += p.ln_bias.transpose();
  const Matrix adapter_out = relu(adapter_in * p.w_down) * p.w_up;
  Matrix frozen_in = norm * p.frozen_ln_gain.asDiagonal();
  frozen_in.rowwise() += p.frozen_ln_bias.transpose();
  Matrix frozen_out = frozen_in * p.frozen_mlp_w;
  frozen_out.rowwise() += p.frozen_mlp_b.transpose();
  return frozen_out + inputs + p.scale * adapter_out;
}

Vector adapter_forward(std::span<const double> v, const EncoderParams& p) {
  return adapter_forward(as_row(v), p).row(0).transpose();
}

EncodeCache encode_forward(const Matrix& inputs, const EncoderParams& p) {
  check_input(inputs, p);
  EncodeCache c;
  c.inputs = inputs;
  forward_into(c, p);
  return c;
}

Matrix encode(const Matrix& inputs, const EncoderParams& p) { return encode_forward(inputs, p).embeddings; }

Vector encode(std::span<const double> v, const EncoderParams& p) {
  return encode(as_row(v), p).row(0).transpose();
}

EncoderGrads encode_backward(const EncodeCache& c, const Matrix& upstream, const EncoderParams& p) {
  require(upstream.rows() == c.embeddings.rows() && upstream.cols() == c.embeddings.cols(), ErrorCode::ShapeMismatch,
          "upstream gradient shape does not match embeddings");
  require(upstream.allFinite(), ErrorCode::NonFinite, "non-finite upstream gradient");

  EncoderGrads g;
  // Through y / ||y||: dy = (de - e <e, de>) / ||y||.
  const Vector proj = (c.embeddings.array() * upstream.array()).rowwise().sum();
  const Matrix d_head_out =
      c.head_norm.cwiseInverse().asDiagonal() * (upstream - proj.asDiagonal() * c.embeddings);

  g.head_w2 = c.hidden_act.transpose() * d_head_out;
  g.head_b2 = d_head_out.colwise().sum().transpose();
  const Matrix d_hidden = relu_mask(c.hidden_pre, d_head_out * p.head_w2.transpose());
  g.head_w1 = c.block_out.transpose() * d_hidden;
  g.head_b1 = d_hidden.colwise().sum().transpose();
  const Matrix d_block = d_hidden * p.head_w1.transpose();

  g.scale = (d_block.array() * c.adapter_out.array()).sum();
  const Matrix d_adapter_out = p.scale * d_block;
  g.w_up = c.adapter_act.transpose() * d_adapter_out;
  const Matrix d_adapter_pre = relu_mask(c.adapter_pre, d_adapter_out * p.w_up.transpose());
  Matrix adapter_in = c.adapter_norm * p.ln_gain.asDiagonal();
  adapter_in.rowwise() += p.ln_bias.transpose();
  g.w_down = adapter_in.transpose() * d_adapter_pre;
  const Matrix d_adapter_in = d_adapter_pre * p.w_down.transpose();
  g.ln_gain = (d_adapter_in.array() * c.adapter_norm.array()).colwise().sum().transpose();
  g.ln_bias = d_adapter_in.colwise().sum().transpose();
  if (!p.train_scale) g.scale = 0.0;
  return g;
}

EncoderGrads encode_backward(const Matrix& inputs, const EncoderParams& p, const Matrix& upstream) {
  return encode_backward(encode_forward(inputs, p), upstream, p);
}

Matrix encode_all(const Matrix& inputs, const EncoderParams& p, std::size_t workers) {
  check_input(inputs, p);
  Matrix out(inputs.rows(), static_cast<Eigen::Index>(p.embed_dim()));
  constexpr Eigen::Index kChunk = 256;
  const auto n_chunks = static_cast<std::size_t>((inputs.rows() + kChunk - 1) / kChunk);
  parallel_for(n_chunks, workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      const auto r0 = static_cast<Eigen::Index>(c) * kChunk;
      const auto rows = std::min(kChunk, inputs.rows() - r0);
      out.middleRows(r0, rows) = encode(Matrix(inputs.middleRows(r0, rows)), p);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::array<char, 4> kCheckpointMagic = {'F', 'S', 'G', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> bytes{};
  require(static_cast<bool>(in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))), ErrorCode::Format,
          std::string("truncated checkpoint while reading ") + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

struct StoredTensor {
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  std::vector<float> values;
};

void write_tensor(std::ostream& out, const std::string& name, const double* data, std::uint64_t rows,
                  std::uint64_t cols) {
  put_le(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_le(out, std::uint32_t{2});
  put_le(out, rows);
  put_le(out, cols);
  for (std::uint64_t i = 0; i < rows * cols; ++i) put_le(out, static_cast<float>(data[i]));
}

std::map<std::string, StoredTensor> read_tensors(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  require(in && magic == kCheckpointMagic, ErrorCode::Format, "not a checkpoint: bad magic");
  const auto version = get_le<std::uint32_t>(in, "version");
  require(version == kCheckpointVersion, ErrorCode::Format, "unsupported checkpoint version " + std::to_string(version));
  const auto count = get_le<std::uint32_t>(in, "tensor count");
  std::map<std::string, StoredTensor> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = get_le<std::uint32_t>(in, "name length");
    require(name_len > 0 && name_len < 4096, ErrorCode::Format, "implausible tensor name length");
    std::string name(name_len, '\0');
    require(static_cast<bool>(in.read(name.data(), name_len)), ErrorCode::Format, "truncated tensor name");
    const auto rank = get_le<std::uint32_t>(in, "rank");
    require(rank == 2, ErrorCode::Format, "tensor " + name + " has unsupported rank " + std::to_string(rank));
    StoredTensor st;
    st.rows = get_le<std::uint64_t>(in, "shape");
    st.cols = get_le<std::uint64_t>(in, "shape");
    require(st.rows * st.cols < (std::uint64_t{1} << 34), ErrorCode::Format, "tensor " + name + " is implausibly large");
    st.values.resize(st.rows * st.cols);
    for (auto& v : st.values) v = get_le<float>(in, name.c_str());
    tensors[name] = std::move(st);
  }
  return tensors;
}

void assign(const std::map<std::string, StoredTensor>& tensors, const std::string& name, double* dst,
            std::uint64_t rows, std::uint64_t cols) {
  auto it = tensors.find(name);
  require(it != tensors.end(), ErrorCode::Format, "checkpoint is missing tensor " + name);
  require(it->second.rows == rows && it->second.cols == cols, ErrorCode::ShapeMismatch,
          "tensor " + name + " has shape " + std::to_string(it->second.rows) + "x" + std::to_string(it->second.cols) +
              ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  for (std::uint64_t i = 0; i < rows * cols; ++i) dst[i] = it->second.values[i];
}

std::pair<std::uint64_t, std::uint64_t> shape_of(const std::map<std::string, StoredTensor>& tensors,
                                                 const std::string& name) {
  auto it = tensors.find(name);
  require(it != tensors.end(), ErrorCode::Format, "checkpoint is missing tensor " + name);
  return {it->second.rows, it->second.cols};
}

}  // namespace

void save_checkpoint(const EncoderParams& p, std::ostream& out) {
  p.validate();
  EncoderParams copy = p;
  auto views = copy.tensors();
  out.write(kCheckpointMagic.data(), 4);
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint32_t>(views.size() + 2));
  for (const auto& t : views)
    write_tensor(out, t.name, t.data, static_cast<std::uint64_t>(t.rows), static_cast<std::uint64_t>(t.cols));
  const double train_scale = p.train_scale ? 1.0 : 0.0;
  write_tensor(out, "meta.train_scale", &train_scale, 1, 1);
  write_tensor(out, "meta.ln_eps", &p.ln_eps, 1, 1);
}

EncoderParams load_checkpoint(std::istream& in) {
  const auto tensors = read_tensors(in);
  const auto [d, db] = shape_of(tensors, "adapter.w_down");
  const auto [d2, h] = shape_of(tensors, "head.w1");
  const auto [h2, e] = shape_of(tensors, "head.w2");
  require(d == d2 && h == h2, ErrorCode::ShapeMismatch, "checkpoint tensor shapes are inconsistent");

  EncoderParams p;
  p.w_down.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(db));
  p.w_up.resize(static_cast<Eigen::Index>(db), static_cast<Eigen::Index>(d));
  p.ln_gain.resize(static_cast<Eigen::Index>(d));
  p.ln_bias.resize(static_cast<Eigen::Index>(d));
  p.head_w1.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h));
  p.head_b1.resize(static_cast<Eigen::Index>(h));
  p.head_w2.resize(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(e));
  p.head_b2.resize(static_cast<Eigen::Index>(e));
  p.frozen_mlp_w.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  p.frozen_mlp_b.resize(static_cast<Eigen::Index>(d));
  p.frozen_ln_gain.resize(static_cast<Eigen::Index>(d));
  p.frozen_ln_bias.resize(static_cast<Eigen::Index>(d));
  for (const auto& t : p.tensors())
    assign(tensors, t.name, t.data, static_cast<std::uint64_t>(t.rows), static_cast<std::uint64_t>(t.cols));
  double train_scale = 0.0;
  assign(tensors, "meta.train_scale", &train_scale, 1, 1);
  assign(tensors, "meta.ln_eps", &p.ln_eps, 1, 1);
  p.train_scale = train_scale != 0.0;
  p.validate();
  return p;
}

void save_checkpoint(const EncoderParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.is_open(), ErrorCode::Io, "cannot write checkpoint: " + path);
  save_checkpoint(p, out);
  require(static_cast<bool>(out), ErrorCode::Io, "write failed: " + path);
}

EncoderParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.is_open(), ErrorCode::Io, "cannot open checkpoint: " + path);
  return load_checkpoint(in);
}

void load_frozen_block(EncoderParams& p, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.is_open(), ErrorCode::Io, "cannot open frozen block weights: " + path);
  const auto tensors = read_tensors(in);
  const auto d = static_cast<std::uint64_t>(p.input_dim());
  assign(tensors, "frozen_mlp.weight", p.frozen_mlp_w.data(), d, d);
  assign(tensors, "frozen_mlp.bias", p.frozen_mlp_b.data(), d, 1);
  assign(tensors, "frozen_ln.gain", p.frozen_ln_gain.data(), d, 1);
  assign(tensors, "frozen_ln.bias", p.frozen_ln_bias.data(), d, 1);
}

}  // namespace fsgcd
