#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lpfm/binary_io.hpp"
#include "lpfm/errors.hpp"
#include "lpfm/matrix.hpp"
#include "lpfm/model.hpp"
#include "lpfm/rng.hpp"

namespace lpfm {

/// Token sequences (raw model inputs) with integer class labels.
template <class S>
struct LabeledDataset {
  TokenBatch<S> inputs;  // N×T×input_dim
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (int l : labels) counts[static_cast<std::size_t>(l)] += 1;
    return counts;
  }

  void validate() const {
    if (inputs.batch() != labels.size()) throw DataError("dataset: input/label count mismatch");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
        throw DataError("dataset: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                        " outside [0, " + std::to_string(num_classes) + ")");
  }

  LabeledDataset subset(const std::vector<std::size_t>& idx) const {
    LabeledDataset out;
    out.num_classes = num_classes;
    out.inputs = TokenBatch<S>(idx.size(), inputs.seq_len(), inputs.dim());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.inputs.set_sequence(i, inputs.sequence(idx[i]));
      out.labels.push_back(labels[idx[i]]);
    }
    return out;
  }

  template <class T>
  LabeledDataset<T> cast() const {
    return LabeledDataset<T>{TokenBatch<T>(inputs.seq_len(), inputs.flat().template cast<T>()), labels, num_classes};
  }
};

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t per_class = 128;
  std::size_t test_per_class = 32;
  std::size_t seq_len = 8;
  std::size_t dim = 32;
  double center_scale = 1.0;
  double class_noise = 0.5;  // per-channel std of instance means around the class center
  double seq_noise = 1.0;    // per-channel std of tokens around the instance mean
  std::uint64_t seed = 0;
  /// Optional explicit class centers (classes × dim); random sphere points otherwise.
  std::vector<std::vector<double>> centers;

  void validate() const {
    if (classes < 1 || per_class < 1 || seq_len < 1 || dim < 1)
      throw ConfigError("synthetic spec: counts must be >= 1");
    if (class_noise < 0.0 || seq_noise < 0.0 || center_scale < 0.0)
      throw ConfigError("synthetic spec: scales must be >= 0");
    if (!centers.empty()) {
      if (centers.size() != classes) throw ConfigError("synthetic spec: centers must list one row per class");
      for (const auto& c : centers)
        if (c.size() != dim) throw ConfigError("synthetic spec: center length must equal dim");
    }
  }
};

template <class S>
struct DatasetSplit {
  LabeledDataset<S> train;
  LabeledDataset<S> test;
};

/// Class centers on the sphere of radius center_scale; instance mean = center +
/// class_noise·N(0, I); token = instance mean + seq_noise·N(0, I).
/// Sample i belongs to class i mod C, so every prefix is near-balanced.
template <class S>
DatasetSplit<S> gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const RngState root(spec.seed);
  std::vector<std::vector<double>> centers = spec.centers;
  if (centers.empty()) {
    RngState crng = root.split(1);
    for (std::size_t c = 0; c < spec.classes; ++c) {
      std::vector<double> v(spec.dim);
      double n2 = 0.0;
      for (auto& x : v) {
        x = crng.normal();
        n2 += x * x;
      }
      const double inv = spec.center_scale / std::sqrt(n2);
      for (auto& x : v) x *= inv;
      centers.push_back(std::move(v));
    }
  }
  auto make = [&](std::size_t per_class, std::uint64_t stream) {
    LabeledDataset<S> ds;
    ds.num_classes = spec.classes;
    const std::size_t n = per_class * spec.classes;
    ds.inputs = TokenBatch<S>(n, spec.seq_len, spec.dim);
    RngState rng = root.split(stream);
    std::vector<double> mean(spec.dim);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = i % spec.classes;
      ds.labels.push_back(static_cast<int>(c));
      for (std::size_t j = 0; j < spec.dim; ++j) mean[j] = centers[c][j] + spec.class_noise * rng.normal();
      for (std::size_t t = 0; t < spec.seq_len; ++t)
        for (std::size_t j = 0; j < spec.dim; ++j)
          ds.inputs.at(i, t, j) = static_cast<S>(mean[j] + spec.seq_noise * rng.normal());
    }
    return ds;
  };
  return DatasetSplit<S>{make(spec.per_class, 2), make(spec.test_per_class, 3)};
}

/// Grayscale or multi-channel images in [0, 1], H×W×ch row-major, channel fastest.
struct ImageSet {
  std::size_t count = 0, height = 0, width = 0, channels = 1;
  std::vector<double> pixels;
  std::vector<int> labels;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image file and its IDX label file. Pixels are scaled by 1/255.
inline ImageSet load_idx_images(const std::string& images_path, const std::string& labels_path,
                                std::size_t num_classes) {
  const auto img = io::read_file(images_path);
  if (img.empty()) throw FormatError("empty IDX image file " + images_path, 0);
  io::Reader r(img);
  const auto magic = r.be<std::uint32_t>("IDX magic");
  if (magic != kIdxImageMagic) throw FormatError("bad IDX image magic in " + images_path, 0);
  ImageSet set;
  set.count = r.be<std::uint32_t>("IDX image count");
  set.height = r.be<std::uint32_t>("IDX row count");
  set.width = r.be<std::uint32_t>("IDX column count");
  const std::size_t n = set.count * set.height * set.width;
  r.need(n, "IDX pixel data");
  set.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) set.pixels[i] = static_cast<double>(r.u8()) / 255.0;

  const auto lab = io::read_file(labels_path);
  if (lab.empty()) throw FormatError("empty IDX label file " + labels_path, 0);
  io::Reader lr(lab);
  if (lr.be<std::uint32_t>("IDX magic") != kIdxLabelMagic) throw FormatError("bad IDX label magic in " + labels_path, 0);
  const std::size_t nl = lr.be<std::uint32_t>("IDX label count");
  if (nl != set.count)
    throw FormatError("IDX label count " + std::to_string(nl) + " does not match image count", 4);
  lr.need(nl, "IDX label data");
  for (std::size_t i = 0; i < nl; ++i) {
    const int l = lr.u8();
    if (static_cast<std::size_t>(l) >= num_classes)
      throw DataError("IDX label " + std::to_string(l) + " at index " + std::to_string(i) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    set.labels.push_back(l);
  }
  return set;
}

/// Patchify every image into raw model inputs (T = (H/p)·(W/p) tokens of p·p·ch values).
template <class S>
LabeledDataset<S> images_to_dataset(const ImageSet& images, std::size_t patch, std::size_t num_classes) {
  LabeledDataset<S> ds;
  ds.num_classes = num_classes;
  const std::size_t per = images.height * images.width * images.channels;
  std::vector<S> buf(per);
  for (std::size_t i = 0; i < images.count; ++i) {
    for (std::size_t k = 0; k < per; ++k) buf[k] = static_cast<S>(images.pixels[i * per + k]);
    Matrix<S> patches = patchify<S>(buf, images.height, images.width, images.channels, patch);
    if (i == 0) ds.inputs = TokenBatch<S>(images.count, patches.rows(), patches.cols());
    ds.inputs.set_sequence(i, patches);
    ds.labels.push_back(images.labels[i]);
  }
  ds.validate();
  return ds;
}

inline constexpr char kDatasetMagic[4] = {'L', 'P', 'D', 'S'};
inline constexpr std::uint32_t kDatasetVersion = 1;

/// "LPDS" | u32 version | u64 N, T, dim, C | N × i32 labels | N·T·dim × f64, all little-endian.
template <class S>
void save_dataset(const std::string& path, const LabeledDataset<S>& ds) {
  io::Writer w;
  w.bytes(kDatasetMagic, 4);
  w.le<std::uint32_t>(kDatasetVersion);
  w.le<std::uint64_t>(ds.size());
  w.le<std::uint64_t>(ds.inputs.seq_len());
  w.le<std::uint64_t>(ds.inputs.dim());
  w.le<std::uint64_t>(ds.num_classes);
  for (int l : ds.labels) w.le<std::int32_t>(l);
  for (S v : ds.inputs.flat().data()) w.f64(static_cast<double>(v));
  io::write_file(path, w.buffer());
}

template <class S>
LabeledDataset<S> load_dataset(const std::string& path) {
  const auto bytes = io::read_file(path);
  io::Reader r(bytes);
  if (r.fixed(4, "dataset magic") != std::string(kDatasetMagic, 4)) throw FormatError("bad dataset magic", 0);
  const auto version = r.le<std::uint32_t>("dataset version");
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version), 4);
  const auto n = r.le<std::uint64_t>("N"), t = r.le<std::uint64_t>("T"), d = r.le<std::uint64_t>("dim");
  LabeledDataset<S> ds;
  ds.num_classes = r.le<std::uint64_t>("C");
  if (t == 0) throw FormatError("dataset seq_len is zero", 16);
  for (std::uint64_t i = 0; i < n; ++i) ds.labels.push_back(r.le<std::int32_t>("label"));
  ds.inputs = TokenBatch<S>(n, t, d);
  r.need(n * t * d * 8, "dataset values");
  for (auto& v : ds.inputs.flat().data()) v = static_cast<S>(r.f64());
  ds.validate();
  return ds;
}

}  // namespace lpfm
