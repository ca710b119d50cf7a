#include "cavity/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

namespace cavity {

std::string to_string(const Dims& d) {
  return std::to_string(d.x) + "x" + std::to_string(d.y) + "x" + std::to_string(d.z);
}

void require_same_dims(const Dims& a, const Dims& b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch " + to_string(a) +
                                " vs " + to_string(b));
  }
}

Volume::Volume(Dims dims, double fill, Spacing spacing)
    : dims_(dims), spacing_(spacing), data_(dims.size(), fill) {
  if (!std::isfinite(fill)) throw std::invalid_argument("Volume: non-finite fill value");
}

Volume::Volume(Dims dims, std::vector<double> data, Spacing spacing)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  if (data_.size() != dims_.size()) {
    throw std::invalid_argument("Volume: data length " + std::to_string(data_.size()) +
                                " does not match dims " + to_string(dims_));
  }
  for (double d : data_) {
    if (!std::isfinite(d)) throw std::invalid_argument("Volume: non-finite value in data");
  }
}

BinaryMask::BinaryMask(Dims dims, bool fill, Spacing spacing)
    : dims_(dims), spacing_(spacing), data_(dims.size(), fill ? 1 : 0) {}

BinaryMask::BinaryMask(Dims dims, std::vector<std::uint8_t> data, Spacing spacing)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  if (data_.size() != dims_.size()) {
    throw std::invalid_argument("BinaryMask: data length " + std::to_string(data_.size()) +
                                " does not match dims " + to_string(dims_));
  }
  for (auto& b : data_) b = b ? 1 : 0;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

void put_f32(std::vector<char>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

std::vector<char> encode_header(const VolumeHeader& h) {
  std::vector<char> out;
  out.reserve(kVol1HeaderBytes);
  out.insert(out.end(), {'V', 'O', 'L', '1'});
  put_u32(out, static_cast<std::uint32_t>(h.dims.x));
  put_u32(out, static_cast<std::uint32_t>(h.dims.y));
  put_u32(out, static_cast<std::uint32_t>(h.dims.z));
  put_f32(out, static_cast<float>(h.spacing.x));
  put_f32(out, static_cast<float>(h.spacing.y));
  put_f32(out, static_cast<float>(h.spacing.z));
  out.push_back(static_cast<char>(h.dtype));
  return out;
}

void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw VolumeFormatError(VolumeFormatError::Kind::Io, "cannot open for writing: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw VolumeFormatError(VolumeFormatError::Kind::Io, "write failed: " + path.string());
}

}  // namespace

void save_volume(const Volume& v, const std::filesystem::path& path) {
  auto bytes = encode_header(v.header());
  bytes.reserve(kVol1HeaderBytes + 4 * v.size());
  for (double d : v.data()) put_f32(bytes, static_cast<float>(d));
  write_file(path, bytes);
}

void save_volume(const BinaryMask& m, const std::filesystem::path& path) {
  auto bytes = encode_header(m.header());
  bytes.reserve(kVol1HeaderBytes + m.size());
  for (auto b : m.data()) bytes.push_back(static_cast<char>(b));
  write_file(path, bytes);
}

AnyVolume load_volume(const std::filesystem::path& path) {
  using Kind = VolumeFormatError::Kind;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw VolumeFormatError(Kind::Io, "cannot open: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (bytes.size() < 4 || bytes[0] != 'V' || bytes[1] != 'O' || bytes[2] != 'L' || bytes[3] != '1') {
    throw VolumeFormatError(Kind::BadMagic, "bad magic (expected VOL1): " + path.string());
  }
  if (bytes.size() < kVol1HeaderBytes) {
    throw VolumeFormatError(Kind::Truncated, "truncated header: " + path.string());
  }
  const unsigned char* p = bytes.data();
  Dims dims{get_u32(p + 4), get_u32(p + 8), get_u32(p + 12)};
  Spacing spacing{get_f32(p + 16), get_f32(p + 20), get_f32(p + 24)};
  const unsigned dtype = p[28];

  if (dtype > 1) {
    throw VolumeFormatError(Kind::BadDtype, "dtype " + std::to_string(dtype) + " not in {0,1}: " + path.string());
  }
  if (dims.x == 0 || dims.y == 0 || dims.z == 0) {
    throw VolumeFormatError(Kind::BadHeader, "zero dimension in header: " + path.string());
  }
  if (!(spacing.x > 0) || !(spacing.y > 0) || !(spacing.z > 0) || !std::isfinite(spacing.x) ||
      !std::isfinite(spacing.y) || !std::isfinite(spacing.z)) {
    throw VolumeFormatError(Kind::BadHeader, "non-positive spacing in header: " + path.string());
  }

  const std::size_t n = dims.size();
  const std::size_t elem = dtype == 0 ? 4 : 1;
  const std::size_t payload = bytes.size() - kVol1HeaderBytes;
  if (payload < n * elem) {
    throw VolumeFormatError(Kind::Truncated, "truncated payload: expected " + std::to_string(n * elem) +
                                                 " bytes, found " + std::to_string(payload) + ": " +
                                                 path.string());
  }

  const unsigned char* body = p + kVol1HeaderBytes;
  if (dtype == 0) {
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      const float v = get_f32(body + 4 * i);
      if (!std::isfinite(v)) {
        throw VolumeFormatError(Kind::NonFinite, "non-finite value at voxel " + std::to_string(i) + ": " +
                                                     path.string());
      }
      data[i] = v;
    }
    return Volume(dims, std::move(data), spacing);
  }
  std::vector<std::uint8_t> data(body, body + n);
  for (auto b : data) {
    if (b > 1) throw VolumeFormatError(Kind::BadHeader, "mask byte outside {0,1}: " + path.string());
  }
  return BinaryMask(dims, std::move(data), spacing);
}

Volume load_scalar_volume(const std::filesystem::path& path) {
  auto any = load_volume(path);
  if (auto* v = std::get_if<Volume>(&any)) return std::move(*v);
  throw VolumeFormatError(VolumeFormatError::Kind::BadDtype, "expected scalar volume (dtype 0): " + path.string());
}

BinaryMask load_mask(const std::filesystem::path& path) {
  auto any = load_volume(path);
  if (auto* m = std::get_if<BinaryMask>(&any)) return std::move(*m);
  throw VolumeFormatError(VolumeFormatError::Kind::BadDtype, "expected binary mask (dtype 1): " + path.string());
}

double percentile(std::span<const double> sorted, double pct) {
  if (sorted.empty()) throw std::invalid_argument("percentile of empty sample");
  const double pos = pct / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Normalized normalize_intensity(const Volume& v, double lo_pct, double hi_pct) {
  if (!(lo_pct >= 0.0 && lo_pct < hi_pct && hi_pct <= 100.0)) {
    throw std::invalid_argument("normalize_intensity: require 0 <= lo_pct < hi_pct <= 100");
  }
  std::vector<double> sorted(v.data().begin(), v.data().end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = percentile(sorted, lo_pct);
  const double hi = percentile(sorted, hi_pct);
  if (!(hi > lo)) return {Volume(v.dims(), 0.0, v.spacing()), true};

  const double scale = 1.0 / (hi - lo);
  return {map(v, [&](double d) { return (std::clamp(d, lo, hi) - lo) * scale; }), false};
}

Volume hadamard(const Volume& a, const Volume& b) {
  require_same_dims(a.dims(), b.dims(), "hadamard");
  return zip(a, b, [](double p, double q) { return p * q; });
}

BinaryMask hadamard(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a.dims(), b.dims(), "hadamard");
  std::vector<std::uint8_t> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] & b.data()[i];
  return BinaryMask(a.dims(), std::move(out), a.spacing());
}

BinaryMask binarize(const Volume& v, double threshold) {
  std::vector<std::uint8_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > threshold ? 1 : 0;
  return BinaryMask(v.dims(), std::move(out), v.spacing());
}

VolumeStats volume_stats(const Volume& v) {
  VolumeStats s;
  if (v.size() == 0) return s;
  s.min = s.max = v[0];
  double sum = 0.0;
  for (double d : v.data()) {
    sum += d;
    s.min = std::min(s.min, d);
    s.max = std::max(s.max, d);
  }
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double d : v.data()) ss += (d - s.mean) * (d - s.mean);
  s.variance = ss / static_cast<double>(v.size());
  return s;
}

}  // namespace cavity
