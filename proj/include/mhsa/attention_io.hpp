#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mhsa/tensor.hpp"

namespace mhsa {

/// Writes one binary PGM per head (`<prefix>head<k>.pgm`, hf rows x wf
/// columns, min..max of the head stretched to 0..255, constant heads drawn at
/// 128) and `<prefix>attention.csv` with `pixel,head,weight` rows. Returns the
/// paths written, heatmaps first.
std::vector<std::filesystem::path> export_attention(const Tensor& alpha, std::size_t hf, std::size_t wf,
                                                    const std::string& out_prefix);

/// 8-bit heatmap for one head, row-major over the hf x wf grid.
std::vector<std::uint8_t> head_heatmap(const Tensor& alpha, std::size_t head);

/// Fraction of attention mass landing on occluded pixels.
///
/// Pixel j carries mass sum_k w_k * alpha[j][k]; the score is the occluded
/// pixels' share of the total. With no head weights w_k = 1/K (plain mean over
/// heads). Passing the fusion weights beta measures how much of the fused
/// feature is drawn from occluded pixels.
double attention_occlusion_score(const Tensor& alpha, std::span<const std::uint8_t> mask,
                                 std::span<const double> head_weights = {});

}  // namespace mhsa
