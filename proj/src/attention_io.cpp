#include "mhsa/attention_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "mhsa/errors.hpp"

namespace mhsa {

std::vector<std::uint8_t> head_heatmap(const Tensor& alpha, std::size_t head) {
  const std::size_t j = alpha.rows();
  if (head >= alpha.cols()) throw DimensionError("head index out of range");
  double lo = alpha(0, head), hi = alpha(0, head);
  for (std::size_t p = 1; p < j; ++p) {
    lo = std::min(lo, alpha(p, head));
    hi = std::max(hi, alpha(p, head));
  }
  std::vector<std::uint8_t> px(j, 128);
  if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) return px;
  for (std::size_t p = 0; p < j; ++p) {
    px[p] = static_cast<std::uint8_t>(std::lround(255.0 * (alpha(p, head) - lo) / (hi - lo)));
  }
  return px;
}

std::vector<std::filesystem::path> export_attention(const Tensor& alpha, std::size_t hf, std::size_t wf,
                                                    const std::string& out_prefix) {
  if (alpha.rank() != 2 || alpha.rows() != hf * wf) {
    throw DimensionError("export_attention: alpha " + shape_string(alpha.shape()) + " does not cover a " +
                         std::to_string(hf) + "x" + std::to_string(wf) + " grid");
  }
  std::vector<std::filesystem::path> written;
  for (std::size_t k = 0; k < alpha.cols(); ++k) {
    const std::filesystem::path path = out_prefix + "head" + std::to_string(k) + ".pgm";
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    f << "P5\n" << wf << ' ' << hf << "\n255\n";
    const auto px = head_heatmap(alpha, k);
    f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
    written.push_back(path);
  }
  const std::filesystem::path csv = out_prefix + "attention.csv";
  std::ofstream f(csv, std::ios::trunc);
  if (!f) throw DataError("cannot write " + csv.string());
  f << "pixel,head,weight\n";
  char buf[64];
  for (std::size_t p = 0; p < alpha.rows(); ++p)
    for (std::size_t k = 0; k < alpha.cols(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", alpha(p, k));
      f << p << ',' << k << ',' << buf << '\n';
    }
  written.push_back(csv);
  return written;
}

double attention_occlusion_score(const Tensor& alpha, std::span<const std::uint8_t> mask,
                                 std::span<const double> head_weights) {
  if (alpha.rank() != 2 || mask.size() != alpha.rows()) {
    throw DimensionError("attention_occlusion_score: mask length " + std::to_string(mask.size()) +
                         " does not match alpha " + shape_string(alpha.shape()));
  }
  const std::size_t k = alpha.cols();
  if (!head_weights.empty() && head_weights.size() != k) {
    throw DimensionError("attention_occlusion_score: head weight count does not match heads");
  }
  double occluded = 0.0, total = 0.0;
  for (std::size_t p = 0; p < alpha.rows(); ++p) {
    double mass = 0.0;
    for (std::size_t h = 0; h < k; ++h) {
      mass += (head_weights.empty() ? 1.0 / static_cast<double>(k) : head_weights[h]) * alpha(p, h);
    }
    total += mass;
    if (mask[p]) occluded += mass;
  }
  return total > 0.0 ? occluded / total : 0.0;
}

}  // namespace mhsa
