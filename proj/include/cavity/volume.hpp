#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace cavity {

struct Dims {
  std::size_t x = 1;
  std::size_t y = 1;
  std::size_t z = 1;

  std::size_t size() const { return x * y * z; }
  std::size_t operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  bool operator==(const Dims&) const = default;
};

// Physical voxel size, dimensionless units by default.
struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  bool operator==(const Spacing&) const = default;
};

enum class DType : std::uint8_t { Scalar = 0, Mask = 1 };

struct VolumeHeader {
  Dims dims;
  Spacing spacing;
  DType dtype = DType::Scalar;
};

std::string to_string(const Dims& d);

// Dense 3D scalar field, x-fastest ordering. Values are held in double
// precision; the on-disk format stores f32.
class Volume {
 public:
  Volume() = default;
  // Constant-filled volume.
  explicit Volume(Dims dims, double fill = 0.0, Spacing spacing = {});
  // Throws std::invalid_argument on length mismatch or non-finite values.
  Volume(Dims dims, std::vector<double> data, Spacing spacing = {});

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t size() const { return data_.size(); }
  std::span<const double> data() const { return data_; }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims_.x * (y + dims_.y * z);
  }
  double operator()(std::size_t x, std::size_t y, std::size_t z) const {
    return data_[index(x, y, z)];
  }
  double operator[](std::size_t i) const { return data_[i]; }

  VolumeHeader header() const { return {dims_, spacing_, DType::Scalar}; }

  // Moves the buffer out; the volume is left empty.
  std::vector<double> release() && { return std::move(data_); }

 private:
  Dims dims_{0, 0, 0};
  Spacing spacing_;
  std::vector<double> data_;
};

// Dense 3D boolean field stored as one byte (0 or 1) per voxel.
class BinaryMask {
 public:
  BinaryMask() = default;
  explicit BinaryMask(Dims dims, bool fill = false, Spacing spacing = {});
  // Nonzero bytes are normalized to 1.
  BinaryMask(Dims dims, std::vector<std::uint8_t> data, Spacing spacing = {});

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t size() const { return data_.size(); }
  std::span<const std::uint8_t> data() const { return data_; }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims_.x * (y + dims_.y * z);
  }
  bool operator()(std::size_t x, std::size_t y, std::size_t z) const {
    return data_[index(x, y, z)] != 0;
  }
  bool operator[](std::size_t i) const { return data_[i] != 0; }

  std::size_t count() const;
  VolumeHeader header() const { return {dims_, spacing_, DType::Mask}; }

 private:
  Dims dims_{0, 0, 0};
  Spacing spacing_;
  std::vector<std::uint8_t> data_;
};

using AnyVolume = std::variant<Volume, BinaryMask>;

class VolumeFormatError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, Truncated, BadDtype, NonFinite, BadHeader };
  VolumeFormatError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// VOL1 container: "VOL1", u32 dims[3], f32 spacing[3], u8 dtype, payload.
inline constexpr std::size_t kVol1HeaderBytes = 29;

AnyVolume load_volume(const std::filesystem::path& path);
Volume load_scalar_volume(const std::filesystem::path& path);
BinaryMask load_mask(const std::filesystem::path& path);

// Scalar payload is rounded to f32; load(save(v)) is exact for f32-representable data.
void save_volume(const Volume& v, const std::filesystem::path& path);
void save_volume(const BinaryMask& m, const std::filesystem::path& path);

struct Normalized {
  Volume volume;
  bool degenerate_window = false;
};

// Clips to the [lo_pct, hi_pct] percentile window (linear interpolation
// between order statistics) and maps affinely onto [0, 1]. A degenerate
// window yields all zeros and sets degenerate_window.
Normalized normalize_intensity(const Volume& v, double lo_pct = 0.5, double hi_pct = 99.5);

double percentile(std::span<const double> sorted, double pct);

Volume hadamard(const Volume& a, const Volume& b);
BinaryMask hadamard(const BinaryMask& a, const BinaryMask& b);

// Voxel is set iff value > threshold.
BinaryMask binarize(const Volume& v, double threshold);

struct VolumeStats {
  double mean = 0.0;
  double variance = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
};
VolumeStats volume_stats(const Volume& v);

template <typename F>
Volume map(const Volume& v, F&& f) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = f(v[i]);
  return Volume(v.dims(), std::move(out), v.spacing());
}

template <typename F>
Volume zip(const Volume& a, const Volume& b, F&& f) {
  if (a.dims() != b.dims()) {
    throw std::invalid_argument("dimension mismatch: " + to_string(a.dims()) + " vs " +
                                to_string(b.dims()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return Volume(a.dims(), std::move(out), a.spacing());
}

void require_same_dims(const Dims& a, const Dims& b, const char* what);

}  // namespace cavity
