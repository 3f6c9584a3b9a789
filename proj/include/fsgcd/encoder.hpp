#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fsgcd/types.hpp"

namespace fsgcd {

struct EncoderShape {
  std::size_t input_dim = 0;
  std::size_t bottleneck_dim = 64;
  std::size_t head_hidden = 2048;
  std::size_t embed_dim = 256;

  void validate() const;
};

// A named view over one parameter tensor. Vectors are rows x 1.
struct TensorView {
  std::string name;
  double* data;
  Eigen::Index rows;
  Eigen::Index cols;
  bool trainable;
  bool decay;  // receives weight decay in sgd_step

  Eigen::Index size() const { return rows * cols; }
};

// Trainable adapter path, frozen block stand-in and projection head.
//
//   adapter = ReLU(LN_a(v) * W_down) * W_up
//   block   = MLP_frozen(LN_frozen(v)) + v + s * adapter
//   embed   = normalize(ReLU(block * H1 + b1) * H2 + b2)
struct EncoderParams {
  Matrix w_down;  // D x d_b
  Matrix w_up;    // d_b x D
  Vector ln_gain;
  Vector ln_bias;
  Matrix head_w1;  // D x H
  Vector head_b1;
  Matrix head_w2;  // H x E
  Vector head_b2;

  Matrix frozen_mlp_w;  // D x D
  Vector frozen_mlp_b;
  Vector frozen_ln_gain;
  Vector frozen_ln_bias;
  double scale = 0.1;
  bool train_scale = false;
  double ln_eps = 1e-10;

  std::size_t input_dim() const { return static_cast<std::size_t>(w_down.rows()); }
  std::size_t bottleneck_dim() const { return static_cast<std::size_t>(w_down.cols()); }
  std::size_t head_hidden() const { return static_cast<std::size_t>(head_w1.cols()); }
  std::size_t embed_dim() const { return static_cast<std::size_t>(head_w2.cols()); }
  EncoderShape shape() const { return {input_dim(), bottleneck_dim(), head_hidden(), embed_dim()}; }

  // Every tensor, trainable first, in a fixed order.
  std::vector<TensorView> tensors();
  std::size_t trainable_count() const;
  std::size_t adapter_trainable_count() const;
  bool all_finite() const;
  void validate() const;

  // Copy with every entry rounded through f32, matching what a checkpoint stores.
  EncoderParams rounded_to_f32() const;
};

// W_up starts at zero so the adapter is initially silent; the frozen block is
// the identity map with zero bias.
// Mirrored: head_w1 = [A, -A], head_w2 = [B; -B] with orthonormal A and B,
// so the untrained head computes x A B exactly (ReLU(z) - ReLU(-z) = z) and
// keeps the input geometry. Needs an even hidden width. Random: He/LeCun
// Gaussians.
enum class HeadInit { Mirrored, Random };

EncoderParams init_encoder(const EncoderShape& shape, std::uint64_t seed, double scale = 0.1,
                           HeadInit head_init = HeadInit::Mirrored);

// Gradients for the trainable subset only. Frozen tensors have no slot here.
struct EncoderGrads {
  Matrix w_down;
  Matrix w_up;
  Vector ln_gain;
  Vector ln_bias;
  Matrix head_w1;
  Vector head_b1;
  Matrix head_w2;
  Vector head_b2;
  double scale = 0.0;  // only meaningful when train_scale is set

  static EncoderGrads zeros_like(const EncoderParams& p);
  std::vector<TensorView> tensors(bool include_scale);
  EncoderGrads& operator+=(const EncoderGrads& other);
  bool all_finite() const;
};

// Row-wise LayerNorm without gain/bias, population variance.
Matrix layer_norm_normalize(const Matrix& x, double eps);

Matrix adapter_forward(const Matrix& inputs, const EncoderParams& p);
Vector adapter_forward(std::span<const double> v, const EncoderParams& p);

struct EncodeCache {
  Matrix inputs;
  Matrix adapter_norm;  // LN_a(v) before gain/bias
  Vector adapter_inv_std;
  Matrix adapter_pre;   // LN_a(v) * W_down
  Matrix adapter_act;   // ReLU of the above
  Matrix adapter_out;   // act * W_up
  Matrix block_out;
  Matrix hidden_pre;
  Matrix hidden_act;
  Matrix head_out;
  Vector head_norm;
  Matrix embeddings;
};

// Unit-norm embeddings, one per input row. Throws Degenerate on a zero head output.
Matrix encode(const Matrix& inputs, const EncoderParams& p);
Vector encode(std::span<const double> v, const EncoderParams& p);
EncodeCache encode_forward(const Matrix& inputs, const EncoderParams& p);

// Gradients of sum_i <upstream_i, embed_i> w.r.t. the trainable parameters.
EncoderGrads encode_backward(const EncodeCache& cache, const Matrix& upstream, const EncoderParams& p);
EncoderGrads encode_backward(const Matrix& inputs, const EncoderParams& p, const Matrix& upstream);

// Encode a large matrix in row chunks, optionally across worker threads.
Matrix encode_all(const Matrix& inputs, const EncoderParams& p, std::size_t workers = 1);

// "FSGP" checkpoints: named tensors with shape headers and f32 payload.
void save_checkpoint(const EncoderParams& p, const std::string& path);
EncoderParams load_checkpoint(const std::string& path);
void save_checkpoint(const EncoderParams& p, std::ostream& out);
EncoderParams load_checkpoint(std::istream& in);

// Replace the frozen block (frozen_mlp.*, frozen_ln.*) with tensors from a checkpoint.
void load_frozen_block(EncoderParams& p, const std::string& path);

}  // namespace fsgcd
