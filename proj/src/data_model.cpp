#include "fsgcd/data_model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "fsgcd/error.hpp"

namespace fsgcd {

namespace {

constexpr std::array<char, 4> kFeatureMagic = {'F', 'S', 'G', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
bool get_le(std::istream& in, T& value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) return false;
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  std::memcpy(&value, bytes.data(), sizeof(T));
  return true;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  for (auto& c : cells) {
    while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.pop_back();
    while (!c.empty() && c.front() == ' ') c.erase(c.begin());
  }
  return cells;
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

bool parse_int(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace

bool FeatureSet::fully_labeled() const {
  return std::all_of(labels.begin(), labels.end(), [](std::int32_t l) { return l != kNoLabel; });
}

std::size_t FeatureSet::labeled_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](std::int32_t l) { return l != kNoLabel; }));
}

void FeatureSet::validate() const {
  require(dim() >= 2, ErrorCode::Format, "feature dimension must be at least 2, got " + std::to_string(dim()));
  require(labels.size() == size(), ErrorCode::Format, "label count does not match sample count");
  for (std::size_t i = 0; i < size(); ++i) {
    require(features.row(static_cast<Eigen::Index>(i)).allFinite(), ErrorCode::NonFinite,
            "non-finite feature value at row " + std::to_string(i));
    const auto l = labels[i];
    require(l == kNoLabel || (l >= 0 && static_cast<std::uint32_t>(l) < class_count), ErrorCode::Format,
            "label " + std::to_string(l) + " out of range at row " + std::to_string(i));
  }
  require(label_names.empty() || label_names.size() == class_count, ErrorCode::Format,
          "label name table does not match class count");
}

FeatureSet load_features_binary(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  require(in && magic == kFeatureMagic, ErrorCode::Format, "malformed header: bad magic");
  std::uint32_t version = 0, dim = 0, classes = 0;
  std::uint64_t n = 0;
  require(get_le(in, version) && get_le(in, n) && get_le(in, dim) && get_le(in, classes), ErrorCode::Format,
          "malformed header: truncated");
  require(version == kFeatureVersion, ErrorCode::Format, "unsupported feature file version " + std::to_string(version));
  require(dim >= 2, ErrorCode::Format, "malformed header: dimension must be at least 2");

  FeatureSet fs;
  fs.class_count = classes;
  fs.features.resize(static_cast<Eigen::Index>(n), dim);
  fs.labels.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    for (std::uint32_t d = 0; d < dim; ++d) {
      float v = 0.0F;
      require(get_le(in, v), ErrorCode::Format, "truncated record at row " + std::to_string(i));
      require(std::isfinite(v), ErrorCode::NonFinite, "non-finite feature value at row " + std::to_string(i));
      fs.features(static_cast<Eigen::Index>(i), d) = v;
    }
    std::int32_t label = 0;
    require(get_le(in, label), ErrorCode::Format, "truncated record at row " + std::to_string(i));
    require(label == kNoLabel || (label >= 0 && static_cast<std::uint32_t>(label) < classes), ErrorCode::Format,
            "label " + std::to_string(label) + " >= class_count at row " + std::to_string(i));
    fs.labels[i] = label;
  }
  char extra = 0;
  require(!in.read(&extra, 1), ErrorCode::Format, "trailing bytes after last record");
  return fs;
}

void save_features_binary(const FeatureSet& fs, std::ostream& out) {
  fs.validate();
  out.write(kFeatureMagic.data(), 4);
  put_le(out, kFeatureVersion);
  put_le(out, static_cast<std::uint64_t>(fs.size()));
  put_le(out, static_cast<std::uint32_t>(fs.dim()));
  put_le(out, fs.class_count);
  for (std::size_t i = 0; i < fs.size(); ++i) {
    for (std::size_t d = 0; d < fs.dim(); ++d)
      put_le(out, static_cast<float>(fs.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d))));
    put_le(out, fs.labels[i]);
  }
}

FeatureSet load_features_csv(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::Format, "malformed header: empty CSV");
  const auto header = split_csv_line(line);
  require(header.size() >= 3 && header.back() == "label", ErrorCode::Format,
          "malformed header: expected f0,...,f{D-1},label");
  const std::size_t dim = header.size() - 1;
  for (std::size_t d = 0; d < dim; ++d)
    require(header[d] == "f" + std::to_string(d), ErrorCode::Format, "malformed header: column " + std::to_string(d));

  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    const std::size_t row = rows.size();
    require(cells.size() == dim + 1, ErrorCode::Format,
            "dimension mismatch at row " + std::to_string(row) + ": expected " + std::to_string(dim) +
                " features, got " + std::to_string(cells.size() == 0 ? 0 : cells.size() - 1));
    std::vector<double> values(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      const auto& c = cells[d];
      auto res = std::from_chars(c.data(), c.data() + c.size(), values[d]);
      require(res.ec == std::errc() && res.ptr == c.data() + c.size(), ErrorCode::Format,
              "unparseable value '" + c + "' at row " + std::to_string(row));
      require(std::isfinite(values[d]), ErrorCode::NonFinite, "non-finite feature value at row " + std::to_string(row));
    }
    rows.push_back(std::move(values));
    raw_labels.push_back(cells[dim]);
  }

  FeatureSet fs;
  fs.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t d = 0; d < dim; ++d) fs.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = rows[i][d];

  auto absent = [](const std::string& s) { return s.empty() || s == "-1"; };
  bool numeric = true;
  for (const auto& s : raw_labels) {
    std::int64_t v = 0;
    if (!absent(s) && !(parse_int(s, v) && v >= 0)) numeric = false;
  }
  fs.labels.assign(raw_labels.size(), kNoLabel);
  if (numeric) {
    std::int64_t max_label = -1;
    for (std::size_t i = 0; i < raw_labels.size(); ++i) {
      std::int64_t v = 0;
      if (absent(raw_labels[i])) continue;
      parse_int(raw_labels[i], v);
      require(v <= INT32_MAX, ErrorCode::Format, "label out of range at row " + std::to_string(i));
      fs.labels[i] = static_cast<std::int32_t>(v);
      max_label = std::max(max_label, v);
    }
    fs.class_count = static_cast<std::uint32_t>(max_label + 1);
  } else {
    // String labels: dense ids in lexicographic order of the names.
    std::map<std::string, std::int32_t> ids;
    for (const auto& s : raw_labels)
      if (!absent(s)) ids.emplace(s, 0);
    std::int32_t next = 0;
    for (auto& [name, id] : ids) {
      id = next++;
      fs.label_names.push_back(name);
    }
    for (std::size_t i = 0; i < raw_labels.size(); ++i)
      if (!absent(raw_labels[i])) fs.labels[i] = ids.at(raw_labels[i]);
    fs.class_count = static_cast<std::uint32_t>(ids.size());
  }
  fs.validate();
  return fs;
}

void save_features_csv(const FeatureSet& fs, std::ostream& out) {
  fs.validate();
  for (std::size_t d = 0; d < fs.dim(); ++d) out << 'f' << d << ',';
  out << "label\n";
  for (std::size_t i = 0; i < fs.size(); ++i) {
    for (std::size_t d = 0; d < fs.dim(); ++d)
      out << format_double(fs.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d))) << ',';
    const auto l = fs.labels[i];
    if (l == kNoLabel)
      out << "-1";
    else if (!fs.label_names.empty())
      out << fs.label_names[static_cast<std::size_t>(l)];
    else
      out << l;
    out << '\n';
  }
}

FeatureSet load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.is_open(), ErrorCode::Io, "cannot open feature file: " + path);
  FeatureSet fs = ends_with(path, ".csv") ? load_features_csv(in) : load_features_binary(in);
  fs.validate();
  return fs;
}

void save_features(const FeatureSet& fs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.is_open(), ErrorCode::Io, "cannot write feature file: " + path);
  if (ends_with(path, ".csv"))
    save_features_csv(fs, out);
  else
    save_features_binary(fs, out);
  require(static_cast<bool>(out), ErrorCode::Io, "write failed: " + path);
}

// ---------------------------------------------------------------------------
// Splits

std::size_t known_class_count(std::uint32_t class_count, double c_l) {
  // The tolerance keeps ratios such as 33/683 from rounding up past the
  // intended integer count.
  const double raw = c_l * static_cast<double>(class_count);
  const auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(k, 1, class_count);
}

bool DatasetSplit::is_known(std::uint32_t cls) const {
  return std::binary_search(known_classes.begin(), known_classes.end(), cls);
}

std::vector<std::int32_t> DatasetSplit::visible_labels(const FeatureSet& fs) const {
  std::vector<std::int32_t> out(fs.size(), kNoLabel);
  for (auto id : labeled_ids) out[id] = fs.labels[id];
  return out;
}

void DatasetSplit::validate(const FeatureSet& fs) const {
  require(sample_count == fs.size(), ErrorCode::ShapeMismatch,
          "split covers " + std::to_string(sample_count) + " samples but feature set has " + std::to_string(fs.size()));
  require(class_count == fs.class_count, ErrorCode::ShapeMismatch, "split class count does not match feature set");
  std::vector<char> seen(fs.size(), 0);
  for (auto id : labeled_ids) {
    require(id < fs.size() && !seen[id], ErrorCode::Format, "invalid or duplicate labeled id " + std::to_string(id));
    seen[id] = 1;
    const auto l = fs.labels[id];
    require(l != kNoLabel && is_known(static_cast<std::uint32_t>(l)), ErrorCode::Format,
            "labeled sample " + std::to_string(id) + " is not in a known class");
  }
  for (auto id : unlabeled_ids) {
    require(id < fs.size() && !seen[id], ErrorCode::Format, "invalid or duplicate unlabeled id " + std::to_string(id));
    seen[id] = 1;
  }
  require(labeled_ids.size() + unlabeled_ids.size() == fs.size(), ErrorCode::Format,
          "labeled and unlabeled ids do not cover all samples");
  for (auto c : unknown_classes)
    require(!is_known(c), ErrorCode::Format, "class " + std::to_string(c) + " is both known and unknown");
  require(known_classes.size() + unknown_classes.size() == class_count, ErrorCode::Format,
          "known and unknown classes do not cover all classes");
}

namespace {

DatasetSplit finish_split(const FeatureSet& fs, std::vector<std::uint32_t> known, std::vector<std::size_t> labeled) {
  DatasetSplit split;
  split.sample_count = fs.size();
  split.class_count = fs.class_count;
  std::sort(known.begin(), known.end());
  std::sort(labeled.begin(), labeled.end());
  split.known_classes = std::move(known);
  for (std::uint32_t c = 0; c < fs.class_count; ++c)
    if (!split.is_known(c)) split.unknown_classes.push_back(c);
  split.labeled_ids = std::move(labeled);
  std::vector<char> is_labeled(fs.size(), 0);
  for (auto id : split.labeled_ids) is_labeled[id] = 1;
  for (std::size_t i = 0; i < fs.size(); ++i)
    if (!is_labeled[i]) split.unlabeled_ids.push_back(i);

  std::size_t known_samples = 0;
  for (std::size_t i = 0; i < fs.size(); ++i)
    if (fs.labels[i] != kNoLabel && split.is_known(static_cast<std::uint32_t>(fs.labels[i]))) ++known_samples;
  split.c_l = fs.class_count == 0 ? 0.0
                                  : static_cast<double>(split.known_classes.size()) / static_cast<double>(fs.class_count);
  split.p_l = known_samples == 0 ? 0.0
                                 : static_cast<double>(split.labeled_ids.size()) / static_cast<double>(known_samples);
  return split;
}

}  // namespace

DatasetSplit generate_split(const FeatureSet& fs, double c_l, double p_l, std::uint64_t seed) {
  require(c_l > 0.0 && c_l <= 1.0, ErrorCode::InvalidArgument, "c_l must be in (0, 1]");
  require(p_l > 0.0 && p_l <= 1.0, ErrorCode::InvalidArgument, "p_l must be in (0, 1]");
  require(fs.fully_labeled(), ErrorCode::InvalidArgument, "generate_split requires a fully labeled feature set");
  require(fs.class_count >= 1, ErrorCode::Degenerate, "feature set has no classes");

  const std::size_t n_known = known_class_count(fs.class_count, c_l);
  std::vector<std::vector<std::size_t>> members(n_known);
  for (std::size_t i = 0; i < fs.size(); ++i) {
    const auto l = static_cast<std::size_t>(fs.labels[i]);
    if (l < n_known) members[l].push_back(i);
  }

  Rng rng(seed);
  std::vector<std::uint32_t> known;
  std::vector<std::size_t> labeled;
  for (std::size_t k = 0; k < n_known; ++k) {
    auto& ids = members[k];
    require(!ids.empty(), ErrorCode::Degenerate, "known class " + std::to_string(k) + " has no samples");
    const auto want = std::max<long>(1, std::lround(p_l * static_cast<double>(ids.size())));
    std::shuffle(ids.begin(), ids.end(), rng);
    labeled.insert(labeled.end(), ids.begin(), ids.begin() + std::min<long>(want, static_cast<long>(ids.size())));
    known.push_back(static_cast<std::uint32_t>(k));
  }
  DatasetSplit split = finish_split(fs, std::move(known), std::move(labeled));
  split.requested_c_l = c_l;
  split.requested_p_l = p_l;
  split.seed = seed;
  return split;
}

nlohmann::json split_to_json(const DatasetSplit& split) {
  nlohmann::json j;
  j["format"] = "fsgcd-split";
  j["version"] = 1;
  j["seed"] = split.seed;
  j["c_l"] = split.requested_c_l;
  j["p_l"] = split.requested_p_l;
  j["realized_c_l"] = split.c_l;
  j["realized_p_l"] = split.p_l;
  j["fsgcd"] = split.is_fsgcd();
  j["sample_count"] = split.sample_count;
  j["class_count"] = split.class_count;
  j["known_classes"] = split.known_classes;
  j["labeled_ids"] = split.labeled_ids;
  return j;
}

DatasetSplit split_from_json(const nlohmann::json& j, const FeatureSet& fs) {
  try {
    require(j.at("format").get<std::string>() == "fsgcd-split", ErrorCode::Format, "not a split manifest");
    require(j.at("sample_count").get<std::size_t>() == fs.size(), ErrorCode::ShapeMismatch,
            "split manifest sample count does not match feature set");
    require(j.at("class_count").get<std::uint32_t>() == fs.class_count, ErrorCode::ShapeMismatch,
            "split manifest class count does not match feature set");
    auto known = j.at("known_classes").get<std::vector<std::uint32_t>>();
    for (auto c : known) require(c < fs.class_count, ErrorCode::Format, "known class out of range");
    auto labeled = j.at("labeled_ids").get<std::vector<std::size_t>>();
    for (auto id : labeled) require(id < fs.size(), ErrorCode::Format, "labeled id out of range");
    DatasetSplit split = finish_split(fs, std::move(known), std::move(labeled));
    split.seed = j.at("seed").get<std::uint64_t>();
    split.requested_c_l = j.at("c_l").get<double>();
    split.requested_p_l = j.at("p_l").get<double>();
    split.validate(fs);
    return split;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("malformed split manifest: ") + e.what());
  }
}

void save_split(const DatasetSplit& split, const std::string& path) {
  std::ofstream out(path);
  require(out.is_open(), ErrorCode::Io, "cannot write split manifest: " + path);
  out << split_to_json(split).dump(2) << '\n';
  require(static_cast<bool>(out), ErrorCode::Io, "write failed: " + path);
}

DatasetSplit load_split(const std::string& path, const FeatureSet& fs) {
  std::ifstream in(path);
  require(in.is_open(), ErrorCode::Io, "cannot open split manifest: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, "malformed split manifest " + path + ": " + e.what());
  }
  return split_from_json(j, fs);
}

// ---------------------------------------------------------------------------
// Augmentation

void AugmentConfig::validate() const {
  require(std::isfinite(noise_sigma) && noise_sigma >= 0.0, ErrorCode::InvalidArgument, "noise_sigma must be >= 0");
  require(dropout_prob >= 0.0 && dropout_prob < 1.0, ErrorCode::InvalidArgument, "dropout_prob must be in [0, 1)");
  require(scale_min <= 1.0 && scale_max >= 1.0 && scale_min > 0.0, ErrorCode::InvalidArgument,
          "scale jitter range must contain 1");
}

Vector augment_view(std::span<const double> v, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * unit(rng);
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t d = 0; d < v.size(); ++d) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const double eps = cfg.noise_sigma * normal(rng);
    const bool keep = unit(rng) >= cfg.dropout_prob;
    out[static_cast<Eigen::Index>(d)] = keep ? s * v[d] + eps : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic mixtures

void SyntheticConfig::validate() const {
  require(class_count >= 2, ErrorCode::InvalidArgument, "synthetic class_count must be >= 2");
  require(samples_per_class >= 1, ErrorCode::InvalidArgument, "samples_per_class must be >= 1");
  require(dimension >= 2, ErrorCode::InvalidArgument, "dimension must be >= 2");
  require(class_separation > 0.0 && std::isfinite(class_separation), ErrorCode::InvalidArgument,
          "class_separation must be > 0");
  require(within_std > 0.0 && std::isfinite(within_std), ErrorCode::InvalidArgument, "within_std must be > 0");
  require(class_count <= dimension, ErrorCode::InvalidArgument,
          "dimension " + std::to_string(dimension) + " too small to place " + std::to_string(class_count) +
              " equidistant centroids");
}

FeatureSet make_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto dim = static_cast<Eigen::Index>(cfg.dimension);

  Matrix gaussian(dim, dim);
  for (Eigen::Index r = 0; r < dim; ++r)
    for (Eigen::Index c = 0; c < dim; ++c) gaussian(r, c) = normal(rng);
  const Matrix rotation = Eigen::HouseholderQR<Matrix>(gaussian).householderQ();

  // Orthonormal directions scaled by sep / sqrt(2) are pairwise sep apart.
  const double radius = cfg.class_separation * cfg.within_std / std::sqrt(2.0);
  FeatureSet fs;
  fs.class_count = cfg.class_count;
  const auto n = static_cast<Eigen::Index>(cfg.class_count) * cfg.samples_per_class;
  fs.features.resize(n, dim);
  fs.labels.resize(static_cast<std::size_t>(n));
  Eigen::Index row = 0;
  for (std::uint32_t k = 0; k < cfg.class_count; ++k) {
    const RowVector centroid = radius * rotation.col(k).transpose();
    for (std::uint32_t s = 0; s < cfg.samples_per_class; ++s, ++row) {
      for (Eigen::Index d = 0; d < dim; ++d) fs.features(row, d) = centroid[d] + cfg.within_std * normal(rng);
      fs.labels[static_cast<std::size_t>(row)] = static_cast<std::int32_t>(k);
    }
  }
  return fs;
}

}  // namespace fsgcd
