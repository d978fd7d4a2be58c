#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mhsa/tensor.hpp"

namespace mhsa {

// Binary layout, all integers little-endian:
//   "MHSA" | u16 version | u32 count
//   count x ( u16 name_len | name bytes | u8 rank | rank x u32 dim | f64 payload... )
//   u32 CRC-32 of every preceding byte
inline constexpr std::uint16_t kContainerVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::vector<std::uint8_t> encode_container(std::span<const NamedTensor> entries);
std::vector<NamedTensor> decode_container(std::span<const std::uint8_t> bytes);

void save_container(const std::filesystem::path& path, std::span<const NamedTensor> entries);
std::vector<NamedTensor> load_container(const std::filesystem::path& path);

const Tensor& find_entry(std::span<const NamedTensor> entries, const std::string& name);
const Tensor* find_entry_or_null(std::span<const NamedTensor> entries, const std::string& name);

}  // namespace mhsa
