// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// 3D grouped convolution and its transpose.
//
// The direct nested-loop kernels in `detail::reference` define the results.
// Depthwise and pointwise fast paths accumulate every output element in the
// same order as the reference forward, so their forward results are
// bit-identical when the compiler does not contract multiply-adds.

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "mednext/errors.hpp"
#include "mednext/tensor.hpp"

namespace mednext {

using Extents3 = std::array<std::size_t, 3>;

struct ConvSpec {
  Extents3 stride{1, 1, 1};
  Extents3 padding{0, 0, 0};
  std::size_t groups = 1;

  // Stride `s`, padding floor(k/2) on every axis.
  static ConvSpec centered(std::size_t kernel, std::size_t stride = 1, std::size_t groups = 1) {
    ConvSpec spec;
    spec.stride = {stride, stride, stride};
    spec.padding = {kernel / 2, kernel / 2, kernel / 2};
    spec.groups = groups;
    return spec;
  }
};

// How a transposed convolution picks its output extents.
enum class OutputAlignment {
  // (in - 1) * stride - 2 * pad + k
  Natural,
  // Exactly stride * in, reached with a trailing output pad in [0, stride).
  ExactMultiple,
};

namespace detail {

struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t groups = 1;
  Extents3 in{}, out{}, kernel{}, stride{}, pad{};

  std::size_t in_voxels() const { return in[0] * in[1] * in[2]; }
  std::size_t out_voxels() const { return out[0] * out[1] * out[2]; }
  std::size_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
  std::size_t in_per_group() const { return in_channels / groups; }
  std::size_t out_per_group() const { return out_channels / groups; }

  bool is_pointwise() const {
    return groups == 1 && kernel == Extents3{1, 1, 1} && pad == Extents3{0, 0, 0};
  }
  bool is_depthwise() const { return groups == in_channels && groups == out_channels; }
};

// Valid output index range [lo, hi) along one axis for kernel tap `tap`.
inline void tap_range(std::size_t tap, std::size_t stride, std::size_t pad, std::size_t in,
                      std::size_t out, std::size_t& lo, std::size_t& hi) {
  // input index = o * stride + tap - pad must lie in [0, in)
  lo = tap >= pad ? 0 : (pad - tap + stride - 1) / stride;
  const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(in) - 1 + static_cast<std::ptrdiff_t>(pad) -
                             static_cast<std::ptrdiff_t>(tap);
  hi = top < 0 ? 0 : std::min(out, static_cast<std::size_t>(top) / stride + 1);
  if (hi < lo) hi = lo;
}

namespace reference {

template <typename T>
void forward(const ConvGeometry& g, const T* x, const T* w, T* y) {
  const std::size_t cin_g = g.in_per_group(), cout_g = g.out_per_group();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
      const std::size_t grp = oc / cout_g;
      for (std::size_t od = 0; od < g.out[0]; ++od) {
        for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
          for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
            T acc = 0;
            for (std::size_t icg = 0; icg < cin_g; ++icg) {
              const std::size_t ic = grp * cin_g + icg;
              for (std::size_t kd = 0; kd < g.kernel[0]; ++kd) {
                const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od * g.stride[0] + kd) -
                                          static_cast<std::ptrdiff_t>(g.pad[0]);
                if (id < 0 || id >= static_cast<std::ptrdiff_t>(g.in[0])) continue;
                for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
                  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride[1] + kh) -
                                            static_cast<std::ptrdiff_t>(g.pad[1]);
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in[1])) continue;
                  for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
                    const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride[2] + kw) -
                                              static_cast<std::ptrdiff_t>(g.pad[2]);
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in[2])) continue;
                    const T wv = w[((oc * cin_g + icg) * g.kernel[0] + kd) * g.kernel[1] * g.kernel[2] +
                                   kh * g.kernel[2] + kw];
                    const T xv = x[(((n * g.in_channels + ic) * g.in[0] + id) * g.in[1] + ih) * g.in[2] + iw];
                    acc += wv * xv;
                  }
                }
              }
            }
            y[(((n * g.out_channels + oc) * g.out[0] + od) * g.out[1] + oh) * g.out[2] + ow] = acc;
          }
        }
      }
    }
  }
}

// dx += adjoint(dy)
template <typename T>
void backward_data(const ConvGeometry& g, const T* dy, const T* w, T* dx) {
  const std::size_t cin_g = g.in_per_group(), cout_g = g.out_per_group();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
      const std::size_t grp = oc / cout_g;
      for (std::size_t od = 0; od < g.out[0]; ++od) {
        for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
          for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
            const T gy = dy[(((n * g.out_channels + oc) * g.out[0] + od) * g.out[1] + oh) * g.out[2] + ow];
            for (std::size_t icg = 0; icg < cin_g; ++icg) {
              const std::size_t ic = grp * cin_g + icg;
              for (std::size_t kd = 0; kd < g.kernel[0]; ++kd) {
                const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od * g.stride[0] + kd) -
                                          static_cast<std::ptrdiff_t>(g.pad[0]);
                if (id < 0 || id >= static_cast<std::ptrdiff_t>(g.in[0])) continue;
                for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
                  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride[1] + kh) -
                                            static_cast<std::ptrdiff_t>(g.pad[1]);
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in[1])) continue;
                  for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
                    const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride[2] + kw) -
                                              static_cast<std::ptrdiff_t>(g.pad[2]);
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in[2])) continue;
                    const T wv = w[((oc * cin_g + icg) * g.kernel[0] + kd) * g.kernel[1] * g.kernel[2] +
                                   kh * g.kernel[2] + kw];
                    dx[(((n * g.in_channels + ic) * g.in[0] + id) * g.in[1] + ih) * g.in[2] + iw] += wv * gy;
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

// dw += d<y, dy>/dw
template <typename T>
void backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw) {
  const std::size_t cin_g = g.in_per_group(), cout_g = g.out_per_group();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
      const std::size_t grp = oc / cout_g;
      for (std::size_t od = 0; od < g.out[0]; ++od) {
        for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
          for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
            const T gy = dy[(((n * g.out_channels + oc) * g.out[0] + od) * g.out[1] + oh) * g.out[2] + ow];
            for (std::size_t icg = 0; icg < cin_g; ++icg) {
              const std::size_t ic = grp * cin_g + icg;
              for (std::size_t kd = 0; kd < g.kernel[0]; ++kd) {
                const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od * g.stride[0] + kd) -
                                          static_cast<std::ptrdiff_t>(g.pad[0]);
                if (id < 0 || id >= static_cast<std::ptrdiff_t>(g.in[0])) continue;
                for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
                  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride[1] + kh) -
                                            static_cast<std::ptrdiff_t>(g.pad[1]);
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in[1])) continue;
                  for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
                    const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride[2] + kw) -
                                              static_cast<std::ptrdiff_t>(g.pad[2]);
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in[2])) continue;
                    const T xv = x[(((n * g.in_channels + ic) * g.in[0] + id) * g.in[1] + ih) * g.in[2] + iw];
                    dw[((oc * cin_g + icg) * g.kernel[0] + kd) * g.kernel[1] * g.kernel[2] +
                       kh * g.kernel[2] + kw] += xv * gy;
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace reference

namespace depthwise {

template <typename T>
void forward(const ConvGeometry& g, const T* x, const T* w, T* y) {
  const std::size_t kv = g.kernel_volume();
  std::fill(y, y + g.batch * g.out_channels * g.out_voxels(), T{0});
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      const T* xp = x + (n * g.in_channels + c) * g.in_voxels();
      T* yp = y + (n * g.out_channels + c) * g.out_voxels();
      const T* wp = w + c * kv;
      for (std::size_t kd = 0; kd < g.kernel[0]; ++kd) {
        std::size_t d0, d1;
        tap_range(kd, g.stride[0], g.pad[0], g.in[0], g.out[0], d0, d1);
        for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
          std::size_t h0, h1;
          tap_range(kh, g.stride[1], g.pad[1], g.in[1], g.out[1], h0, h1);
          for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
            std::size_t w0, w1;
            tap_range(kw, g.stride[2], g.pad[2], g.in[2], g.out[2], w0, w1);
            const T wv = wp[(kd * g.kernel[1] + kh) * g.kernel[2] + kw];
            for (std::size_t od = d0; od < d1; ++od) {
              const std::size_t id = od * g.stride[0] + kd - g.pad[0];
              for (std::size_t oh = h0; oh < h1; ++oh) {
                const std::size_t ih = oh * g.stride[1] + kh - g.pad[1];
                T* yr = yp + (od * g.out[1] + oh) * g.out[2] + w0;
                const T* xr = xp + (id * g.in[1] + ih) * g.in[2] + w0 * g.stride[2] + kw - g.pad[2];
                const std::size_t len = w1 - w0;
                if (g.stride[2] == 1) {
                  for (std::size_t t = 0; t < len; ++t) yr[t] += wv * xr[t];
                } else {
                  const std::size_t sw = g.stride[2];
                  for (std::size_t t = 0; t < len; ++t) yr[t] += wv * xr[t * sw];
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void backward_data(const ConvGeometry& g, const T* dy, const T* w, T* dx) {
  const std::size_t kv = g.kernel_volume();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      T* xp = dx + (n * g.in_channels + c) * g.in_voxels();
      const T* yp = dy + (n * g.out_channels + c) * g.out_voxels();
      const T* wp = w + c * kv;
      for (std::size_t kd = 0; kd < g.kernel[0]; ++kd) {
        std::size_t d0, d1;
        tap_range(kd, g.stride[0], g.pad[0], g.in[0], g.out[0], d0, d1);
        for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
          std::size_t h0, h1;
          tap_range(kh, g.stride[1], g.pad[1], g.in[1], g.out[1], h0, h1);
          for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
            std::size_t w0, w1;
            tap_range(kw, g.stride[2], g.pad[2], g.in[2], g.out[2], w0, w1);
            const T wv = wp[(kd * g.kernel[1] + kh) * g.kernel[2] + kw];
            for (std::size_t od = d0; od < d1; ++od) {
              const std::size_t id = od * g.stride[0] + kd - g.pad[0];
              for (std::size_t oh = h0; oh < h1; ++oh) {
                const std::size_t ih = oh * g.stride[1] + kh - g.pad[1];
                const T* yr = yp + (od * g.out[1] + oh) * g.out[2] + w0;
                T* xr = xp + (id * g.in[1] + ih) * g.in[2] + w0 * g.stride[2] + kw - g.pad[2];
                const std::size_t len = w1 - w0;
                if (g.stride[2] == 1) {
                  for (std::size_t t = 0; t < len; ++t) xr[t] += wv * yr[t];
                } else {
                  const std::size_t sw = g.stride[2];
                  for (std::size_t t = 0; t < len; ++t) xr[t * sw] += wv * yr[t];
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw) {
  const std::size_t kv = g.kernel_volume();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      const T* xp = x + (n * g.in_channels + c) * g.in_voxels();
      const T* yp = dy + (n * g.out_channels + c) * g.out_voxels();
      T* wp = dw + c * kv;
      for (std::size_t kd = 0; kd < g.kernel[0]; ++kd) {
        std::size_t d0, d1;
        tap_range(kd, g.stride[0], g.pad[0], g.in[0], g.out[0], d0, d1);
        for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
          std::size_t h0, h1;
          tap_range(kh, g.stride[1], g.pad[1], g.in[1], g.out[1], h0, h1);
          for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
            std::size_t w0, w1;
            tap_range(kw, g.stride[2], g.pad[2], g.in[2], g.out[2], w0, w1);
            const std::size_t sw = g.stride[2];
            T lanes[8] = {};
            for (std::size_t od = d0; od < d1; ++od) {
              const std::size_t id = od * g.stride[0] + kd - g.pad[0];
              for (std::size_t oh = h0; oh < h1; ++oh) {
                const std::size_t ih = oh * g.stride[1] + kh - g.pad[1];
                const T* yr = yp + (od * g.out[1] + oh) * g.out[2] + w0;
                const T* xr = xp + (id * g.in[1] + ih) * g.in[2] + w0 * sw + kw - g.pad[2];
                const std::size_t len = w1 - w0;
                std::size_t t = 0;
                if (sw == 1) {
                  for (; t + 8 <= len; t += 8) {
                    for (std::size_t l = 0; l < 8; ++l) lanes[l] += yr[t + l] * xr[t + l];
                  }
                }
                for (; t < len; ++t) lanes[0] += yr[t] * xr[t * sw];
              }
            }
            T total = 0;
            for (T v : lanes) total += v;
            wp[(kd * g.kernel[1] + kh) * g.kernel[2] + kw] += total;
          }
        }
      }
    }
  }
}

}  // namespace depthwise

namespace pointwise {

inline constexpr std::size_t kTile = 256;

// Y[co, v] = sum_ci W[co, ci] * X[ci, v], ci ascending.
template <typename T>
void gemm(const T* w, const T* x, T* y, std::size_t cout, std::size_t cin, std::size_t voxels) {
  T acc[kTile];
  for (std::size_t v0 = 0; v0 < voxels; v0 += kTile) {
    const std::size_t len = std::min(kTile, voxels - v0);
    for (std::size_t co = 0; co < cout; ++co) {
      std::fill(acc, acc + len, T{0});
      const T* wr = w + co * cin;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T wv = wr[ci];
        const T* xr = x + ci * voxels + v0;
        for (std::size_t t = 0; t < len; ++t) acc[t] += wv * xr[t];
      }
      std::copy(acc, acc + len, y + co * voxels + v0);
    }
  }
}

// DX[ci, v] += sum_co W[co, ci] * DY[co, v]
template <typename T>
void gemm_transposed_accumulate(const T* w, const T* dy, T* dx, std::size_t cout, std::size_t cin,
                                std::size_t voxels) {
  T acc[kTile];
  for (std::size_t v0 = 0; v0 < voxels; v0 += kTile) {
    const std::size_t len = std::min(kTile, voxels - v0);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      std::fill(acc, acc + len, T{0});
      for (std::size_t co = 0; co < cout; ++co) {
        const T wv = w[co * cin + ci];
        const T* yr = dy + co * voxels + v0;
        for (std::size_t t = 0; t < len; ++t) acc[t] += wv * yr[t];
      }
      T* xr = dx + ci * voxels + v0;
      for (std::size_t t = 0; t < len; ++t) xr[t] += acc[t];
    }
  }
}

// DW[co, ci] += sum_v DY[co, v] * X[ci, v]
template <typename T>
void gemm_weight_accumulate(const T* x, const T* dy, T* dw, std::size_t cout, std::size_t cin,
                            std::size_t voxels) {
  for (std::size_t co = 0; co < cout; ++co) {
    const T* yr = dy + co * voxels;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* xr = x + ci * voxels;
      T lanes[8] = {};
      std::size_t v = 0;
      for (; v + 8 <= voxels; v += 8) {
        for (std::size_t l = 0; l < 8; ++l) lanes[l] += yr[v + l] * xr[v + l];
      }
      for (; v < voxels; ++v) lanes[0] += yr[v] * xr[v];
      T total = 0;
      for (T s : lanes) total += s;
      dw[co * cin + ci] += total;
    }
  }
}

inline bool unit_stride(const ConvGeometry& g) { return g.stride == Extents3{1, 1, 1}; }

// Copies the strided sample positions of one sample (C x in) into (C x out).
template <typename T>
void gather_strided(const ConvGeometry& g, const T* x, T* dst, std::size_t channels) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t od = 0; od < g.out[0]; ++od) {
      for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
        for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
          *dst++ = x[((c * g.in[0] + od * g.stride[0]) * g.in[1] + oh * g.stride[1]) * g.in[2] +
                     ow * g.stride[2]];
        }
      }
    }
  }
}

template <typename T>
void scatter_strided_add(const ConvGeometry& g, const T* src, T* x, std::size_t channels) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t od = 0; od < g.out[0]; ++od) {
      for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
        for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
          x[((c * g.in[0] + od * g.stride[0]) * g.in[1] + oh * g.stride[1]) * g.in[2] +
            ow * g.stride[2]] += *src++;
        }
      }
    }
  }
}

template <typename T>
void forward(const ConvGeometry& g, const T* x, const T* w, T* y) {
  const std::size_t vin = g.in_voxels(), vout = g.out_voxels();
  std::vector<T> gathered;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* xs = x + n * g.in_channels * vin;
    if (!unit_stride(g)) {
      gathered.resize(g.in_channels * vout);
      gather_strided(g, xs, gathered.data(), g.in_channels);
      xs = gathered.data();
    }
    gemm(w, xs, y + n * g.out_channels * vout, g.out_channels, g.in_channels, vout);
  }
}

template <typename T>
void backward_data(const ConvGeometry& g, const T* dy, const T* w, T* dx) {
  const std::size_t vin = g.in_voxels(), vout = g.out_voxels();
  std::vector<T> compact;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* dys = dy + n * g.out_channels * vout;
    T* dxs = dx + n * g.in_channels * vin;
    if (unit_stride(g)) {
      gemm_transposed_accumulate(w, dys, dxs, g.out_channels, g.in_channels, vout);
    } else {
      compact.assign(g.in_channels * vout, T{0});
      gemm_transposed_accumulate(w, dys, compact.data(), g.out_channels, g.in_channels, vout);
      scatter_strided_add(g, compact.data(), dxs, g.in_channels);
    }
  }
}

template <typename T>
void backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw) {
  const std::size_t vin = g.in_voxels(), vout = g.out_voxels();
  std::vector<T> gathered;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* xs = x + n * g.in_channels * vin;
    if (!unit_stride(g)) {
      gathered.resize(g.in_channels * vout);
      gather_strided(g, xs, gathered.data(), g.in_channels);
      xs = gathered.data();
    }
    gemm_weight_accumulate(xs, dy + n * g.out_channels * vout, dw, g.out_channels, g.in_channels,
                           vout);
  }
}

}  // namespace pointwise

template <typename T>
void conv_forward(const ConvGeometry& g, const T* x, const T* w, T* y) {
  if (g.is_pointwise()) return pointwise::forward(g, x, w, y);
  if (g.is_depthwise()) return depthwise::forward(g, x, w, y);
  reference::forward(g, x, w, y);
}

template <typename T>
void conv_backward_data(const ConvGeometry& g, const T* dy, const T* w, T* dx) {
  if (g.is_pointwise()) return pointwise::backward_data(g, dy, w, dx);
  if (g.is_depthwise()) return depthwise::backward_data(g, dy, w, dx);
  reference::backward_data(g, dy, w, dx);
}

template <typename T>
void conv_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw) {
  if (g.is_pointwise()) return pointwise::backward_weight(g, x, dy, dw);
  if (g.is_depthwise()) return depthwise::backward_weight(g, x, dy, dw);
  reference::backward_weight(g, x, dy, dw);
}

template <typename T>
void add_channel_bias(T* y, const T* bias, std::size_t batch, std::size_t channels,
                      std::size_t voxels) {
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      T* row = y + (n * channels + c) * voxels;
      const T b = bias[c];
      for (std::size_t v = 0; v < voxels; ++v) row[v] += b;
    }
  }
}

template <typename T>
void accumulate_bias_grad(const T* dy, T* db, std::size_t batch, std::size_t channels,
                          std::size_t voxels) {
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T* row = dy + (n * channels + c) * voxels;
      T s = 0;
      for (std::size_t v = 0; v < voxels; ++v) s += row[v];
      db[c] += s;
    }
  }
}

template <typename T>
void check_kernel(const Tensor<T>& weight, const char* op) {
  if (weight.rank() != 5) {
    throw ConfigurationError(std::string(op) + ": weight must have 5 axes, got " +
                             shape_string(weight.shape()));
  }
  for (std::size_t a = 2; a < 5; ++a) {
    if (weight.extent(a) % 2 == 0) {
      throw ConfigurationError(std::string(op) + ": kernel extents must be odd, got " +
                               shape_string(weight.shape()));
    }
  }
}

template <typename T>
void check_spec(const ConvSpec& spec, const char* op) {
  if (spec.groups == 0) throw ConfigurationError(std::string(op) + ": groups must be positive");
  for (auto s : spec.stride) {
    if (s == 0) throw ConfigurationError(std::string(op) + ": stride must be positive");
  }
}

}  // namespace detail

// Output extent of a convolution along one axis.
inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                      std::size_t pad) {
  if (in + 2 * pad < kernel) {
    throw ConfigurationError("convolution input extent " + std::to_string(in) +
                             " too small for kernel " + std::to_string(kernel));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

// Grouped 3D convolution. input N x Cin x D x H x W, weight Cout x Cin/groups x kd x kh x kw.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvSpec& spec) {
  detail::check_kernel(weight, "conv3d");
  detail::check_spec<T>(spec, "conv3d");
  if (input.rank() != 5) {
    throw ConfigurationError("conv3d: input must be N x C x D x H x W, got " +
                             shape_string(input.shape()));
  }
  detail::ConvGeometry g;
  g.batch = input.extent(0);
  g.in_channels = input.extent(1);
  g.out_channels = weight.extent(0);
  g.groups = spec.groups;
  if (g.in_channels % g.groups != 0 || g.out_channels % g.groups != 0 ||
      weight.extent(1) != g.in_channels / g.groups) {
    throw ConfigurationError("conv3d: input " + shape_string(input.shape()) + " and weight " +
                             shape_string(weight.shape()) + " incompatible with groups=" +
                             std::to_string(g.groups));
  }
  if (bias.defined() && bias.numel() != g.out_channels) {
    throw ConfigurationError("conv3d: bias length must equal output channels");
  }
  for (std::size_t a = 0; a < 3; ++a) {
    g.in[a] = input.extent(2 + a);
    g.kernel[a] = weight.extent(2 + a);
    g.stride[a] = spec.stride[a];
    g.pad[a] = spec.padding[a];
    g.out[a] = conv_output_extent(g.in[a], g.kernel[a], g.stride[a], g.pad[a]);
  }
  std::vector<T> out(g.batch * g.out_channels * g.out_voxels());
  detail::conv_forward(g, input.raw(), weight.raw(), out.data());
  if (bias.defined()) {
    detail::add_channel_bias(out.data(), bias.raw(), g.batch, g.out_channels, g.out_voxels());
  }
  Shape shape{g.batch, g.out_channels, g.out[0], g.out[1], g.out[2]};
  return Tensor<T>::make_result(std::move(shape), std::move(out), {input, weight, bias},
                                [g](const auto& o) {
    const auto& ins = o.grad_fn->inputs;
    if (T* gx = detail::grad_target(ins[0])) {
      detail::conv_backward_data(g, o.grad.data(), ins[1]->data.data(), gx);
    }
    if (T* gw = detail::grad_target(ins[1])) {
      detail::conv_backward_weight(g, ins[0]->data.data(), o.grad.data(), gw);
    }
    if (T* gb = detail::grad_target(ins[2])) {
      detail::accumulate_bias_grad(o.grad.data(), gb, g.batch, g.out_channels, g.out_voxels());
    }
  });
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const ConvSpec& spec) {
  return conv3d(input, weight, Tensor<T>{}, spec);
}

// Adjoint of conv3d with the same weight and spec. Weight layout is
// Cin x Cout/groups x kd x kh x kw (the conv3d layout read backwards), so the
// output has weight.extent(1) * groups channels.
template <typename T>
Tensor<T> conv3d_transposed(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                            const ConvSpec& spec,
                            OutputAlignment alignment = OutputAlignment::ExactMultiple) {
  detail::check_kernel(weight, "conv3d_transposed");
  detail::check_spec<T>(spec, "conv3d_transposed");
  if (input.rank() != 5) {
    throw ConfigurationError("conv3d_transposed: input must be N x C x D x H x W, got " +
                             shape_string(input.shape()));
  }
  // The geometry is that of the forward convolution this op is the adjoint of:
  // its "input" is our output.
  detail::ConvGeometry g;
  g.batch = input.extent(0);
  g.out_channels = weight.extent(0);
  g.groups = spec.groups;
  g.in_channels = weight.extent(1) * spec.groups;
  if (input.extent(1) != g.out_channels || g.out_channels % g.groups != 0) {
    throw ConfigurationError("conv3d_transposed: input " + shape_string(input.shape()) +
                             " and weight " + shape_string(weight.shape()) +
                             " incompatible with groups=" + std::to_string(g.groups));
  }
  if (bias.defined() && bias.numel() != g.in_channels) {
    throw ConfigurationError("conv3d_transposed: bias length must equal output channels");
  }
  for (std::size_t a = 0; a < 3; ++a) {
    g.out[a] = input.extent(2 + a);
    g.kernel[a] = weight.extent(2 + a);
    g.stride[a] = spec.stride[a];
    g.pad[a] = spec.padding[a];
    const std::ptrdiff_t natural = static_cast<std::ptrdiff_t>((g.out[a] - 1) * g.stride[a] + g.kernel[a]) -
                                   2 * static_cast<std::ptrdiff_t>(g.pad[a]);
    if (natural < 1) throw ConfigurationError("conv3d_transposed: padding exceeds kernel reach");
    if (alignment == OutputAlignment::Natural) {
      g.in[a] = static_cast<std::size_t>(natural);
    } else {
      const std::ptrdiff_t target = static_cast<std::ptrdiff_t>(g.out[a] * g.stride[a]);
      const std::ptrdiff_t trailing = target - natural;
      if (trailing < 0 || trailing >= static_cast<std::ptrdiff_t>(g.stride[a])) {
        throw ConfigurationError(
            "conv3d_transposed: kernel " + std::to_string(g.kernel[a]) + ", stride " +
            std::to_string(g.stride[a]) + ", padding " + std::to_string(g.pad[a]) +
            " cannot produce exactly " + std::to_string(target) + " output voxels");
      }
      g.in[a] = static_cast<std::size_t>(target);
    }
  }
  std::vector<T> out(g.batch * g.in_channels * g.in_voxels(), T{0});
  detail::conv_backward_data(g, input.raw(), weight.raw(), out.data());
  if (bias.defined()) {
    detail::add_channel_bias(out.data(), bias.raw(), g.batch, g.in_channels, g.in_voxels());
  }
  Shape shape{g.batch, g.in_channels, g.in[0], g.in[1], g.in[2]};
  return Tensor<T>::make_result(std::move(shape), std::move(out), {input, weight, bias},
                                [g](const auto& o) {
    const auto& ins = o.grad_fn->inputs;
    if (T* gx = detail::grad_target(ins[0])) {
      std::vector<T> tmp(ins[0]->data.size());
      detail::conv_forward(g, o.grad.data(), ins[1]->data.data(), tmp.data());
      for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
    }
    if (T* gw = detail::grad_target(ins[1])) {
      detail::conv_backward_weight(g, o.grad.data(), ins[0]->data.data(), gw);
    }
    if (T* gb = detail::grad_target(ins[2])) {
      detail::accumulate_bias_grad(o.grad.data(), gb, g.batch, g.in_channels, g.in_voxels());
    }
  });
}

template <typename T>
Tensor<T> conv3d_transposed(const Tensor<T>& input, const Tensor<T>& weight, const ConvSpec& spec,
                            OutputAlignment alignment = OutputAlignment::ExactMultiple) {
  return conv3d_transposed(input, weight, Tensor<T>{}, spec, alignment);
}

}  // namespace mednext
