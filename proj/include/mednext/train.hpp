// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Supervised training on synthetic cases. Each step draws a minibatch from a
// seeded permutation of the cases, runs forward/backward through the
// deep-supervision loss and applies one AdamW update. Every eval_every steps
// (and at the last step) the mean foreground DSC over all training cases is
// recorded.

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mednext/checkpoint.hpp"
#include "mednext/errors.hpp"
#include "mednext/loss.hpp"
#include "mednext/metrics.hpp"
#include "mednext/model.hpp"
#include "mednext/optim.hpp"
#include "mednext/synthetic.hpp"
#include "mednext/tensor.hpp"

namespace mednext {

struct DataSpec {
  std::size_t num_cases = 4;
  std::size_t size = 32;
  std::size_t num_classes = 2;
  std::uint64_t seed = 1;
};

struct TrainOptions {
  std::size_t steps = 300;
  std::size_t batch_size = 2;
  std::size_t eval_every = 10;
  std::uint64_t seed = 0;  // initialization and batch order
  AdamWOptions optimizer;
  std::optional<double> stop_at_dsc;  // stop at the first evaluation reaching this
};

struct HistoryRow {
  std::size_t step = 0;
  double loss = 0;
  std::optional<double> dsc_mean;
};

template <typename T>
struct TrainResult {
  MedNeXtModel<T> model;
  std::vector<HistoryRow> history;
  std::optional<std::size_t> steps_to_target;  // first eval step with dsc >= stop_at_dsc
  double final_dsc = 0;
};

inline std::vector<SegmentationCase> make_dataset(const DataSpec& spec) {
  std::vector<SegmentationCase> cases;
  for (std::size_t i = 0; i < spec.num_cases; ++i) {
    cases.push_back(generate_synthetic_case(spec.seed * 1000003ULL + i, spec.size, spec.num_classes));
  }
  return cases;
}

// Mean of the per-class foreground DSC over all cases.
template <typename T>
double evaluate_dsc(const MedNeXtModel<T>& model, const std::vector<SegmentationCase>& cases) {
  NoGradGuard no_grad;
  double total = 0;
  for (const auto& c : cases) {
    const auto out = model.forward(c.volume_tensor<T>());
    total += mean_of(dsc_metric(argmax_labels(out.main), c.labels, model.config().num_classes));
  }
  return cases.empty() ? 0.0 : total / static_cast<double>(cases.size());
}

namespace detail {

template <typename T>
Tensor<T> stack_volumes(const std::vector<const SegmentationCase*>& batch) {
  const Extents3 e = batch.front()->extents;
  std::vector<T> data;
  data.reserve(batch.size() * e[0] * e[1] * e[2]);
  for (const auto* c : batch) {
    if (c->extents != e) throw UsageError("cases in a batch must share extents");
    data.insert(data.end(), c->volume.begin(), c->volume.end());
  }
  return Tensor<T>({batch.size(), 1, e[0], e[1], e[2]}, std::move(data));
}

}  // namespace detail

template <typename T>
TrainResult<T> train_loop(MedNeXtModel<T> model, const std::vector<SegmentationCase>& cases,
                          const TrainOptions& options) {
  if (cases.empty()) throw UsageError("training needs at least one case");
  if (options.batch_size == 0) throw UsageError("batch size must be positive");
  if (options.eval_every == 0) throw UsageError("eval interval must be positive");
  if (model.config().in_channels != 1) {
    throw ConfigurationError("synthetic cases have one input channel, model expects " +
                             std::to_string(model.config().in_channels));
  }
  for (const auto& c : cases) {
    if (c.num_classes != model.config().num_classes) {
      throw ConfigurationError("case has " + std::to_string(c.num_classes) +
                               " classes, model predicts " +
                               std::to_string(model.config().num_classes));
    }
  }

  model.set_requires_grad(true);
  std::vector<Tensor<T>> params;
  for (auto& [name, t] : model.named_parameters()) params.push_back(t);
  AdamW<T> optimizer(params, options.optimizer);

  std::mt19937_64 order_rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(cases.size());
  std::size_t cursor = order.size();

  TrainResult<T> result{MedNeXtModel<T>(model.config()), {}, std::nullopt, 0.0};
  const std::size_t batch = std::min(options.batch_size, cases.size());
  for (std::size_t step = 1; step <= options.steps; ++step) {
    std::vector<const SegmentationCase*> picked;
    std::vector<LabelMap> targets;
    while (picked.size() < batch) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      picked.push_back(&cases[order[cursor++]]);
      targets.push_back(picked.back()->labels);
    }

    optimizer.zero_grad();
    const auto out = model.forward(detail::stack_volumes<T>(picked));
    std::vector<Tensor<T>> outputs{out.main};
    outputs.insert(outputs.end(), out.deep_supervision.begin(), out.deep_supervision.end());
    const Tensor<T> loss = dice_ce_loss(outputs, std::span<const LabelMap>(targets));
    const double loss_value = static_cast<double>(loss.item());
    if (!std::isfinite(loss_value)) {
      throw TrainingError("non-finite loss at step " + std::to_string(step));
    }
    backward(loss);
    optimizer.step();

    HistoryRow row{step, loss_value, std::nullopt};
    if (step % options.eval_every == 0 || step == options.steps) {
      row.dsc_mean = evaluate_dsc(model, cases);
      result.final_dsc = *row.dsc_mean;
    }
    result.history.push_back(row);
    if (row.dsc_mean && options.stop_at_dsc && *row.dsc_mean >= *options.stop_at_dsc) {
      result.steps_to_target = step;
      break;
    }
  }
  model.zero_grad();
  model.set_requires_grad(false);
  result.model = std::move(model);
  return result;
}

// Builds a model initialized from `seed` and trains it on the data spec.
template <typename T>
TrainResult<T> train_loop(const ModelConfig& config, const DataSpec& data, std::size_t steps,
                          std::uint64_t seed) {
  TrainOptions options;
  options.steps = steps;
  options.seed = seed;
  return train_loop(build_model<T>(config, seed), make_dataset(data), options);
}

inline std::string format_history_csv(const std::vector<HistoryRow>& history) {
  std::ostringstream os;
  os << "step,loss,dsc_mean\n";
  os.precision(17);
  for (const auto& r : history) {
    os << r.step << ',' << r.loss << ',';
    if (r.dsc_mean) os << *r.dsc_mean;
    os << '\n';
  }
  return os.str();
}

}  // namespace mednext
