// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Initializes a model from a checkpoint of the same architecture trained with
// a different kernel size. Tensors whose shapes agree are copied verbatim
// (norm layers included); convolution kernels whose spatial extents differ
// are trilinearly resampled with aligned corners. No renormalization is
// applied after resampling.

#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "mednext/checkpoint.hpp"
#include "mednext/errors.hpp"
#include "mednext/model.hpp"
#include "mednext/resize.hpp"
#include "mednext/tensor.hpp"

namespace mednext {

struct TransferReport {
  std::vector<std::string> copied;
  std::vector<std::string> resampled;
  std::vector<std::string> failed;  // "name: reason"

  bool ok() const { return failed.empty(); }

  std::string summary() const {
    std::ostringstream os;
    os << copied.size() << " tensors copied, " << resampled.size() << " tensors resampled, "
       << failed.size() << " tensors failed";
    return os.str();
  }
};

// Resizes the spatial axes of a Cout x Cin x k x k x k kernel.
template <typename T>
Tensor<T> resample_kernel(const Tensor<T>& weight, const Extents3& target) {
  if (weight.rank() != 5) {
    throw UsageError("resample_kernel: expected a 5-axis convolution kernel, got " +
                     shape_string(weight.shape()));
  }
  for (auto e : target) {
    if (e % 2 == 0) throw ConfigurationError("resample_kernel: target extents must be odd");
  }
  NoGradGuard no_grad;
  return trilinear_resize(weight.detach(), target, /*align_corners=*/true);
}

namespace detail {

inline bool spatially_resizable(const Shape& from, const Shape& to) {
  return from.size() == 5 && to.size() == 5 && from[0] == to[0] && from[1] == to[1];
}

}  // namespace detail

// Classifies every tensor without modifying anything.
template <typename T>
TransferReport plan_upkern(const Checkpoint& source, const MedNeXtModel<T>& target) {
  TransferReport report;
  for (const auto& [name, t] : target.named_parameters()) {
    const CheckpointEntry* e = source.find(name);
    if (!e) {
      report.failed.push_back(name + ": missing from source");
    } else if (e->shape == t.shape()) {
      report.copied.push_back(name);
    } else if (detail::spatially_resizable(e->shape, t.shape())) {
      report.resampled.push_back(name);
    } else {
      report.failed.push_back(name + ": shape " + shape_string(e->shape) + " vs " +
                              shape_string(t.shape()));
    }
  }
  for (const auto& e : source.entries) {
    if (!target.has_parameter(e.name)) report.failed.push_back(e.name + ": missing from target");
  }
  return report;
}

// Returns a new model with target's configuration whose every parameter comes
// from `source`.
template <typename T>
MedNeXtModel<T> upkern_transfer(const Checkpoint& source, const MedNeXtModel<T>& target,
                                TransferReport* report_out = nullptr) {
  if (!source.metadata.empty()) {
    const ModelConfig src = source.config();
    if (!src.same_except_kernel(target.config())) {
      throw CompatibilityError(
          "source and target configurations differ beyond kernel size:\nsource:\n" +
          format_config(src) + "target:\n" + format_config(target.config()));
    }
  }
  TransferReport report = plan_upkern(source, target);
  if (!report.ok()) {
    std::string msg = "incompatible checkpoint:";
    for (const auto& f : report.failed) msg += " [" + f + "]";
    throw CompatibilityError(msg);
  }
  MedNeXtModel<T> out = target.clone();
  for (auto& [name, t] : out.named_parameters()) {
    const CheckpointEntry& e = *source.find(name);
    Tensor<T> src = e.to_tensor<T>();
    if (e.shape != t.shape()) {
      src = resample_kernel(src, {t.extent(2), t.extent(3), t.extent(4)});
    }
    std::copy(src.data().begin(), src.data().end(), t.data().begin());
  }
  if (report_out) *report_out = std::move(report);
  return out;
}

template <typename T>
MedNeXtModel<T> upkern_transfer(const MedNeXtModel<T>& source, const MedNeXtModel<T>& target,
                                TransferReport* report_out = nullptr) {
  return upkern_transfer(make_checkpoint(source), target, report_out);
}

}  // namespace mednext
