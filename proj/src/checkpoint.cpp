#include "gads/checkpoint.hpp"

#include <cmath>

#include "gads/binary_io.hpp"
#include "gads/error.hpp"

namespace gads {

namespace {

void put_matrix(io::Writer& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.put_f64(m(i, j));
}

void put_vector(io::Writer& out, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) out.put_f64(v[i]);
}

Eigen::MatrixXd get_matrix(io::Reader& in, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = in.get_f64();
  return m;
}

Eigen::VectorXd get_vector(io::Reader& in, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = in.get_f64();
  return v;
}

}  // namespace

void write_checkpoint(const AdapterParams& p, const std::filesystem::path& path) {
  const auto d_cls = static_cast<Eigen::Index>(p.d_cls());
  const auto d_patch = static_cast<Eigen::Index>(p.d_patch());
  const auto d_text = static_cast<Eigen::Index>(p.d_text());
  if (p.psi.weight.cols() != d_cls || p.psi.bias.size() != d_cls || p.head.weight.size() != d_cls ||
      p.phi1.bias.size() != d_text || p.phi2.weight.rows() != d_text || p.phi2.weight.cols() != d_patch ||
      p.phi2.bias.size() != d_text) {
    throw ShapeError("adapter parameters have inconsistent dimensions");
  }
  if (!pack_dasl(p).allFinite() || !pack_oasl(p).allFinite()) throw ValidationError("non-finite adapter parameter");

  io::Writer out(path);
  out.bytes(kCheckpointMagic, 8);
  out.put(kCheckpointVersion);
  out.put(static_cast<std::uint32_t>(d_cls));
  out.put(static_cast<std::uint32_t>(d_patch));
  out.put(static_cast<std::uint32_t>(d_text));
  put_matrix(out, p.psi.weight);
  put_vector(out, p.psi.bias);
  put_vector(out, p.head.weight);
  out.put_f64(p.head.bias);
  put_matrix(out, p.phi1.weight);
  put_vector(out, p.phi1.bias);
  put_matrix(out, p.phi2.weight);
  put_vector(out, p.phi2.bias);
  out.close();
}

AdapterParams read_checkpoint(const std::filesystem::path& path) {
  io::Reader in(path);
  if (!in.match_magic(kCheckpointMagic)) throw FormatError("not a checkpoint (bad magic): " + path.string());
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto d_cls = static_cast<Eigen::Index>(in.get<std::uint32_t>());
  const auto d_patch = static_cast<Eigen::Index>(in.get<std::uint32_t>());
  const auto d_text = static_cast<Eigen::Index>(in.get<std::uint32_t>());
  const std::uint64_t expected =
      8ULL * static_cast<std::uint64_t>(d_cls * d_cls + 2 * d_cls + 1 + 2 * (d_text * d_patch + d_text));
  if (in.remaining() != expected) throw CorruptFileError("checkpoint size does not match its dimensions");

  AdapterParams p;
  p.psi.weight = get_matrix(in, d_cls, d_cls);
  p.psi.bias = get_vector(in, d_cls);
  p.head.weight = get_vector(in, d_cls);
  p.head.bias = in.get_f64();
  p.phi1 = PatchTextAdapter{get_matrix(in, d_text, d_patch), get_vector(in, d_text), Branch::dasl};
  p.phi2 = PatchTextAdapter{get_matrix(in, d_text, d_patch), get_vector(in, d_text), Branch::oasl};
  if (!pack_dasl(p).allFinite() || !pack_oasl(p).allFinite()) throw ValidationError("non-finite value in checkpoint");
  return p;
}

}  // namespace gads
