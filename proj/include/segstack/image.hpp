#pragma once

#include <cstdint>
#include <vector>

#include "segstack/metrics.hpp"
#include "segstack/tensor.hpp"

namespace segstack {

// 8-bit interleaved raster, c = 1 (masks) or 3 (images).
struct Raster {
  int h = 0, w = 0, c = 0;
  std::vector<std::uint8_t> v;

  Raster() = default;
  Raster(int height, int width, int channels)
      : h(height), w(width), c(channels), v(std::size_t(height) * width * channels, 0) {}

  std::uint8_t& at(int y, int x, int ch) { return v[(std::size_t(y) * w + x) * c + ch]; }
  std::uint8_t at(int y, int x, int ch) const { return v[(std::size_t(y) * w + x) * c + ch]; }
};

// 0/255 mask raster -> binary mask. Any other value is malformed.
inline Mask raster_to_mask(const Raster& r) {
  check(r.c == 1, "raster_to_mask: expected single channel, got ", r.c);
  Mask m(r.h, r.w);
  for (std::size_t i = 0; i < r.v.size(); ++i) {
    check(r.v[i] == 0 || r.v[i] == 255, "raster_to_mask: non-binary value ", int(r.v[i]));
    m.v[i] = r.v[i] == 255 ? 1 : 0;
  }
  return m;
}

inline Raster mask_to_raster(const Mask& m) {
  Raster r(m.h, m.w, 1);
  for (std::size_t i = 0; i < m.v.size(); ++i) r.v[i] = m.v[i] ? 255 : 0;
  return r;
}

// Copies a patch-sized window of an interleaved raster into one batch slot
// of an NCHW tensor, scaling to [0, 1].
inline void fill_tensor_from_raster(Tensor& batch, int slot, const Raster& r, int y0, int x0,
                                    int size) {
  const Shape4 s = batch.shape();
  check(s.c == r.c && s.h == size && s.w == size, "fill_tensor_from_raster: shape mismatch");
  for (int ch = 0; ch < r.c; ++ch)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        batch.at(slot, ch, y, x) = float(r.at(y0 + y, x0 + x, ch)) * (1.0f / 255.0f);
}

}  // namespace segstack
