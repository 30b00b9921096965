#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpfm/binary_io.hpp"
#include "lpfm/config.hpp"
#include "lpfm/errors.hpp"
#include "lpfm/model.hpp"

namespace lpfm {

inline constexpr char kCheckpointMagic[4] = {'L', 'P', 'F', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "LPFM" | u32 version | u64 model digest | u32 tensor count |
/// per tensor: u32 name length, name, u32 ndim, u64 dims..., f64 values (LE).
template <class S>
std::vector<std::uint8_t> encode_checkpoint(const ModelConfig& cfg, const ModelParams<S>& params) {
  io::Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint64_t>(model_digest(cfg));
  std::uint32_t count = 0;
  params.visit([&](const std::string&, const Matrix<S>&, bool) { ++count; });
  w.le<std::uint32_t>(count);
  params.visit([&](const std::string& name, const Matrix<S>& m, bool) {
    w.str(name);
    w.le<std::uint32_t>(2);
    w.le<std::uint64_t>(m.rows());
    w.le<std::uint64_t>(m.cols());
    for (S v : m.data()) w.f64(static_cast<double>(v));
  });
  return w.buffer();
}

template <class S>
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams<S>& params) {
  io::write_file(path, encode_checkpoint(cfg, params));
}

/// Decodes into the parameter layout implied by cfg; names, shapes and the
/// model digest must all match.
template <class S>
ModelParams<S> decode_checkpoint(const std::vector<std::uint8_t>& bytes, const ModelConfig& cfg) {
  io::Reader r(bytes);
  if (r.fixed(4, "checkpoint magic") != std::string(kCheckpointMagic, 4)) throw FormatError("bad checkpoint magic", 0);
  const auto version = r.le<std::uint32_t>("checkpoint version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  const auto digest = r.le<std::uint64_t>("model digest");
  if (digest != model_digest(cfg)) throw FormatError("checkpoint was written for a different model config", 8);
  const std::size_t count_at = r.offset();
  const auto count = r.le<std::uint32_t>("tensor count");

  ModelParams<S> params = init_params<S>(cfg, RngState());
  std::uint32_t expected = 0;
  params.visit([&](const std::string&, Matrix<S>&, bool) { ++expected; });
  if (count != expected)
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, model has " + std::to_string(expected),
                      count_at);
  params.visit([&](const std::string& name, Matrix<S>& m, bool) {
    const std::size_t at = r.offset();
    const std::string got = r.str("tensor name");
    if (got != name) throw FormatError("expected tensor '" + name + "', found '" + got + "'", at);
    const std::size_t shape_at = r.offset();
    const auto ndim = r.le<std::uint32_t>("tensor rank");
    if (ndim != 2) throw FormatError("tensor '" + name + "' has rank " + std::to_string(ndim), shape_at);
    const auto rows = r.le<std::uint64_t>("tensor rows"), cols = r.le<std::uint64_t>("tensor cols");
    if (rows != m.rows() || cols != m.cols()) throw FormatError("tensor '" + name + "' has the wrong shape", shape_at);
    r.need(rows * cols * 8, "tensor values");
    for (auto& v : m.data()) v = static_cast<S>(r.f64());
  });
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.offset());
  return params;
}

template <class S>
ModelParams<S> load_checkpoint(const std::string& path, const ModelConfig& cfg) {
  return decode_checkpoint<S>(io::read_file(path), cfg);
}

}  // namespace lpfm
