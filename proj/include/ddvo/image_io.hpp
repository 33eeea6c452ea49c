#pragma once

// PGM (P5), PPM (P6) and PFM (Pf/PF) readers and writers. 8-bit inputs map
// to [0, 1] by division by maxval. PFM rows are stored bottom-to-top; the sign
// of the scale line selects the byte order (negative = little endian).
// Writers go through a temporary file and rename on success.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "ddvo/errors.hpp"
#include "ddvo/imaging.hpp"

namespace ddvo::io {

namespace detail {

inline std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError(path, 0, "cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Cursor over a netpbm-style header: whitespace separated tokens, '#'
// comments running to end of line.
class HeaderReader {
 public:
  HeaderReader(const std::string& path, const std::vector<unsigned char>& bytes)
      : path_(path), bytes_(bytes) {}

  std::string token() {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) ++pos_;
    if (start == pos_) throw ImageIoError(path_, pos_, "unexpected end of header");
    return {bytes_.begin() + start, bytes_.begin() + pos_};
  }

  long integer(const char* what) {
    const std::size_t at = pos_;
    const std::string t = token();
    try {
      std::size_t used = 0;
      const long v = std::stol(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw ImageIoError(path_, at, std::string("invalid ") + what + " '" + t + "'");
    }
  }

  double real(const char* what) {
    const std::size_t at = pos_;
    const std::string t = token();
    std::istringstream ss(t);
    ss.imbue(std::locale::classic());
    double v = 0.0;
    ss >> v;
    if (!ss || !ss.eof()) throw ImageIoError(path_, at, std::string("invalid ") + what + " '" + t + "'");
    return v;
  }

  // Consumes the single whitespace byte separating header from raster.
  std::size_t end_of_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw ImageIoError(path_, pos_, "missing whitespace before pixel data");
    }
    return ++pos_;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& path_;
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

inline void require_bytes(const std::string& path, std::size_t offset, std::size_t need, std::size_t have) {
  if (offset + need > have) {
    throw ImageIoError(path, have,
                       "truncated pixel data: expected " + std::to_string(need) + " bytes from offset " +
                           std::to_string(offset) + ", file ends after " + std::to_string(have - offset));
  }
}

inline void write_atomically(const std::string& path, const std::string& bytes) {
  const std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ImageIoError(path, 0, "cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw ImageIoError(path, 0, "write failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw ImageIoError(path, 0, "rename failed");
  }
}

inline unsigned char to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

}  // namespace detail

/// Reads P5 (grayscale) or P6 (color) 8-bit netpbm images.
inline ImageBuffer read_pnm(const std::string& path) {
  const auto bytes = detail::slurp(path);
  detail::HeaderReader hdr(path, bytes);
  const std::string magic = hdr.token();
  int channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw ImageIoError(path, 0, "unsupported magic '" + magic + "' (expected P5 or P6)");
  }
  const long w = hdr.integer("width");
  const long h = hdr.integer("height");
  const long maxval = hdr.integer("maxval");
  if (w <= 0 || h <= 0) throw ImageIoError(path, 0, "non-positive image size");
  if (maxval <= 0 || maxval > 255) throw ImageIoError(path, 0, "only 8-bit maxval (1..255) is supported");
  const std::size_t offset = hdr.end_of_header();
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  detail::require_bytes(path, offset, need, bytes.size());
  std::vector<double> data(need);
  for (std::size_t i = 0; i < need; ++i) data[i] = bytes[offset + i] / static_cast<double>(maxval);
  return ImageBuffer(static_cast<int>(w), static_cast<int>(h), channels, std::move(data));
}

/// Writes a 1-channel image as P5 or a 3-channel image as P6.
inline void write_pnm(const std::string& path, const ImageBuffer& img) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw ImageIoError(path, 0, "PNM output needs 1 or 3 channels");
  }
  std::string out = (img.channels() == 1 ? "P5\n" : "P6\n") + std::to_string(img.width()) + " " +
                    std::to_string(img.height()) + "\n255\n";
  out.reserve(out.size() + img.storage().size());
  for (double v : img.data()) out.push_back(static_cast<char>(detail::to_byte(v)));
  detail::write_atomically(path, out);
}

/// Reads a PFM file (Pf = 1 channel, PF = 3 channels) in either byte order.
inline ImageBuffer read_pfm(const std::string& path) {
  const auto bytes = detail::slurp(path);
  detail::HeaderReader hdr(path, bytes);
  const std::string magic = hdr.token();
  int channels = 0;
  if (magic == "Pf") {
    channels = 1;
  } else if (magic == "PF") {
    channels = 3;
  } else {
    throw ImageIoError(path, 0, "unsupported magic '" + magic + "' (expected Pf or PF)");
  }
  const long w = hdr.integer("width");
  const long h = hdr.integer("height");
  const double scale = hdr.real("scale");
  if (w <= 0 || h <= 0) throw ImageIoError(path, 0, "non-positive image size");
  if (scale == 0.0 || !std::isfinite(scale)) throw ImageIoError(path, 0, "invalid PFM scale");
  const bool little = scale < 0.0;
  const std::size_t offset = hdr.end_of_header();
  const std::size_t count = static_cast<std::size_t>(w) * h * channels;
  detail::require_bytes(path, offset, count * 4, bytes.size());
  const bool swap = little != (std::endian::native == std::endian::little);
  ImageBuffer img(static_cast<int>(w), static_cast<int>(h), channels);
  for (long row = 0; row < h; ++row) {
    const long y = h - 1 - row;  // bottom-to-top
    for (long x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        const std::size_t at = offset + ((static_cast<std::size_t>(row) * w + x) * channels + c) * 4;
        std::uint32_t raw;
        std::memcpy(&raw, bytes.data() + at, 4);
        if (swap) raw = __builtin_bswap32(raw);
        img.at(static_cast<int>(x), static_cast<int>(y), c) = std::bit_cast<float>(raw);
      }
    }
  }
  return img;
}

/// Writes a 1- or 3-channel image as float32 PFM.
inline void write_pfm(const std::string& path, const ImageBuffer& img, bool little_endian = true) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw ImageIoError(path, 0, "PFM output needs 1 or 3 channels");
  }
  std::string out = (img.channels() == 1 ? "Pf\n" : "PF\n") + std::to_string(img.width()) + " " +
                    std::to_string(img.height()) + "\n" + (little_endian ? "-1.0" : "1.0") + "\n";
  const bool swap = little_endian != (std::endian::native == std::endian::little);
  for (int row = 0; row < img.height(); ++row) {
    const int y = img.height() - 1 - row;
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) {
        std::uint32_t raw = std::bit_cast<std::uint32_t>(static_cast<float>(img.at(x, y, c)));
        if (swap) raw = __builtin_bswap32(raw);
        char buf[4];
        std::memcpy(buf, &raw, 4);
        out.append(buf, 4);
      }
    }
  }
  detail::write_atomically(path, out);
}

/// Dispatches on the magic bytes: PFM, PGM or PPM.
inline ImageBuffer read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError(path, 0, "cannot open file");
  char m[2] = {0, 0};
  in.read(m, 2);
  if (in.gcount() < 2) throw ImageIoError(path, static_cast<std::size_t>(in.gcount()), "file too short");
  if (m[0] == 'P' && (m[1] == 'f' || m[1] == 'F')) return read_pfm(path);
  return read_pnm(path);
}

}  // namespace ddvo::io
