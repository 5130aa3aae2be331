#pragma once

// EOVT tile container:
//   "EOVT" | u16 version | u32 header length | UTF-8 JSON header | float32 payload
// All integers and floats little-endian; payload is channel-major C*H*W.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "eovae/data/image.hpp"

namespace eovae::data {

inline constexpr char kTileMagic[4] = {'E', 'O', 'V', 'T'};
inline constexpr std::uint16_t kTileVersion = 1;

namespace detail {

template <typename U>
U byteswap(U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  std::reverse(buf, buf + sizeof(U));
  std::memcpy(&v, buf, sizeof(U));
  return v;
}

template <typename U>
void put_le(std::string& out, U v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U get_le(const char* p) {
  U v;
  std::memcpy(&v, p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

/// Writes bytes to path via a temporary sibling and an atomic rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string encode_tile(const MultispectralImage& img) {
  nlohmann::json header = {
      {"C", img.channels()},
      {"H", img.height()},
      {"W", img.width()},
      {"wavelengths_nm", img.wavelengths().centers()},
      {"modality", std::string(to_string(img.modality()))},
      {"date", img.acquisition_date() ? nlohmann::json(format_date(*img.acquisition_date())) : nlohmann::json()},
      {"value_space", std::string(to_string(img.value_space()))},
  };
  const std::string text = header.dump();
  std::string out(kTileMagic, 4);
  detail::put_le<std::uint16_t>(out, kTileVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + img.pixels().size() * 4);
  for (float v : img.pixels().values()) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline MultispectralImage decode_tile(const std::string& bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kTileMagic, 4) != 0)
    throw CorruptContainerError(origin + ": missing EOVT magic or truncated preamble");
  const auto version = detail::get_le<std::uint16_t>(bytes.data() + 4);
  if (version != kTileVersion)
    throw CorruptContainerError(origin + ": unsupported container version " + std::to_string(version));
  const auto header_len = detail::get_le<std::uint32_t>(bytes.data() + 6);
  if (bytes.size() < 10 + static_cast<std::size_t>(header_len))
    throw CorruptContainerError(origin + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 10, bytes.begin() + 10 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptContainerError(origin + ": bad JSON header: " + e.what());
  }
  std::int64_t c = 0, h = 0, w = 0;
  std::vector<double> wavelengths;
  Modality modality = Modality::OTHER;
  ValueSpace space = ValueSpace::RAW;
  std::optional<Date> date;
  try {
    c = header.at("C").get<std::int64_t>();
    h = header.at("H").get<std::int64_t>();
    w = header.at("W").get<std::int64_t>();
    wavelengths = header.at("wavelengths_nm").get<std::vector<double>>();
    modality = parse_modality(header.at("modality").get<std::string>());
    space = parse_value_space(header.at("value_space").get<std::string>());
    if (header.contains("date") && !header["date"].is_null()) date = parse_date(header["date"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw CorruptContainerError(origin + ": malformed header field: " + e.what());
  }
  if (c < 1 || h < 1 || w < 1) throw CorruptContainerError(origin + ": nonpositive dimensions in header");
  const std::size_t payload = bytes.size() - 10 - header_len;
  const std::size_t plane = static_cast<std::size_t>(h * w) * 4;
  if (payload != static_cast<std::size_t>(c) * plane) {
    if (payload > 0 && payload % plane == 0)
      throw DimensionError(origin + ": header declares C=" + std::to_string(c) + " but payload holds " +
                           std::to_string(payload / plane) + " channels");
    throw CorruptContainerError(origin + ": payload size " + std::to_string(payload) + " is not a whole image");
  }
  Tensor<float> pixels({c, h, w});
  const char* p = bytes.data() + 10 + header_len;
  for (std::size_t i = 0; i < pixels.size(); ++i)
    pixels[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(p + 4 * i));
  return MultispectralImage(std::move(pixels), WavelengthProfile(std::move(wavelengths)), modality, date, space);
}

inline void save_tile(const MultispectralImage& img, const std::filesystem::path& path) {
  if (path.has_parent_path() && !std::filesystem::is_directory(path.parent_path()))
    throw IoError("parent directory of '" + path.string() + "' does not exist");
  write_file_atomic(path, encode_tile(img));
}

inline MultispectralImage load_tile(const std::filesystem::path& path) {
  return decode_tile(detail::read_file(path), path.string());
}

}  // namespace eovae::data
