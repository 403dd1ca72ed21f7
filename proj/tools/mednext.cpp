// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// mednext: inspect, train, upkern, predict, eval and synth.
//
// Failures print one line, "error: <category>: <message>", to stderr and
// exit nonzero (2 for command-line errors, 1 otherwise).

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "mednext/mednext.hpp"

namespace {

using namespace mednext;

struct ModelFlags {
  std::string preset;
  std::string config_path;
  std::optional<std::size_t> kernel;
  std::optional<std::size_t> channels;
  std::optional<std::size_t> in_channels;
  std::optional<std::size_t> classes;

  void add_to(CLI::App& cmd) {
    auto* p = cmd.add_option("--preset", preset, "S, B, M or L");
    auto* c = cmd.add_option("--config", config_path, "key=value config file");
    p->excludes(c);
    cmd.add_option("--kernel", kernel, "depthwise kernel size (odd)");
    cmd.add_option("--channels", channels, "base channel count C");
    cmd.add_option("--in-channels", in_channels, "input channels");
    cmd.add_option("--classes", classes, "output classes");
  }

  ModelConfig resolve(const std::string& default_preset = "S") const {
    ModelConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw IoError("cannot open config '" + config_path + "'");
      std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      cfg = parse_config(text);
    } else {
      cfg = ModelConfig::from_preset(preset.empty() ? default_preset : preset);
    }
    if (kernel) cfg.kernel = *kernel;
    if (channels) cfg.base_channels = *channels;
    if (in_channels) cfg.in_channels = *in_channels;
    if (classes) cfg.num_classes = *classes;
    cfg.validate();
    return cfg;
  }
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

// "N" or "DxHxW".
Extents3 parse_extents(const std::string& text) {
  std::vector<std::size_t> parts;
  std::size_t pos = 0;
  for (;;) {
    const auto next = text.find('x', pos);
    const std::string item = text.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(item, &used);
    } catch (const std::logic_error&) {
    }
    if (used == 0 || used != item.size() || v <= 0) throw UsageError("bad extents '" + text + "'");
    parts.push_back(static_cast<std::size_t>(v));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  if (parts.size() == 1) return {parts[0], parts[0], parts[0]};
  if (parts.size() == 3) return {parts[0], parts[1], parts[2]};
  throw UsageError("bad extents '" + text + "'");
}

// ---- inspect ----

int run_inspect(const ModelFlags& flags, const std::string& size, bool csv) {
  const ModelConfig cfg = flags.resolve();
  const Extents3 ext = parse_extents(size);
  const auto rows = stage_costs(cfg, ext);
  if (csv) {
    std::cout << format_cost_csv(rows);
    return 0;
  }
  std::cout << "config: " << (cfg.preset.empty() ? "custom" : cfg.preset) << " k=" << cfg.kernel
            << " C=" << cfg.base_channels << " classes=" << cfg.num_classes << " input "
            << ext[0] << 'x' << ext[1] << 'x' << ext[2] << '\n';
  std::cout << format_cost_table(rows);
  const auto f = flop_breakdown(cfg, ext);
  std::cout << std::fixed << std::setprecision(3) << "parameters: " << analytic_parameter_count(cfg)
            << " (" << static_cast<double>(analytic_parameter_count(cfg)) / 1e6 << " M)\n"
            << "GFLOPs: " << f.total() / 1e9 << " (conv " << f.convolution / 1e9 << ", norm "
            << f.normalization / 1e9 << ", act " << f.activation / 1e9 << ")\n";
  return 0;
}

// ---- train ----

struct TrainFlags {
  std::size_t steps = 300;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::size_t cases = 4;
  std::size_t size = 32;
  std::size_t batch = 2;
  std::size_t eval_every = 10;
  std::optional<double> target_dsc;
  std::string init;
  std::string output;
  std::string csv;
};

int run_train(const ModelFlags& flags, const TrainFlags& t) {
  ModelFlags narrowed = flags;
  if (!narrowed.channels && narrowed.config_path.empty()) narrowed.channels = 8;
  const ModelConfig cfg = narrowed.resolve();

  MedNeXtModel<float> model = build_model<float>(cfg, t.seed);
  if (!t.init.empty()) load_parameters(load_checkpoint(t.init), model);

  DataSpec data;
  data.num_cases = t.cases;
  data.size = t.size;
  data.num_classes = cfg.num_classes;
  data.seed = t.seed;
  TrainOptions options;
  options.steps = t.steps;
  options.batch_size = t.batch;
  options.eval_every = t.eval_every;
  options.seed = t.seed;
  options.optimizer.lr = t.lr;
  options.stop_at_dsc = t.target_dsc;

  const auto result = train_loop(std::move(model), make_dataset(data), options);
  for (const auto& row : result.history) {
    if (!row.dsc_mean) continue;
    std::cout << "step " << row.step << " loss " << std::setprecision(6) << row.loss << " dsc "
              << *row.dsc_mean << '\n';
  }
  std::cout << "final dsc " << result.final_dsc << " after " << result.history.size() << " steps\n";
  if (!t.csv.empty()) {
    const std::string text = format_history_csv(result.history);
    detail::write_file_atomic(t.csv, text);
  }
  if (!t.output.empty()) {
    save_checkpoint(result.model, t.output);
    std::cout << "saved " << t.output << '\n';
  }
  return 0;
}

// ---- upkern ----

int run_upkern(std::optional<std::size_t> kernel, const std::string& source, const std::string& target,
               const std::string& output, std::uint64_t seed) {
  const Checkpoint src = load_checkpoint(source);
  const MedNeXtModel<float> target_model = [&] {
    if (!target.empty()) return model_from_checkpoint<float>(load_checkpoint(target));
    ModelConfig cfg = src.config();
    if (kernel) cfg.kernel = *kernel;
    return build_model<float>(cfg, seed);
  }();
  TransferReport report;
  const auto out = upkern_transfer(src, target_model, &report);
  for (const auto& n : report.copied) std::cout << "copied " << n << '\n';
  for (const auto& n : report.resampled) std::cout << "resampled " << n << '\n';
  std::cout << report.summary() << '\n';
  if (!output.empty()) save_checkpoint(out, output);
  return 0;
}

// ---- predict ----

Tensor<float> input_tensor(const Volume& vol, std::size_t in_channels) {
  Shape s = vol.shape;
  if (s.size() == 3) s.insert(s.begin(), {1, 1});
  else if (s.size() == 4) s.insert(s.begin(), 1);
  if (s.size() != 5) throw ConfigurationError("input volume must have rank 3, 4 or 5, got " + shape_string(vol.shape));
  if (s[1] != in_channels) {
    throw ConfigurationError("input has " + std::to_string(s[1]) + " channels, model expects " +
                             std::to_string(in_channels));
  }
  std::vector<float> values = std::visit(
      [](const auto& v) { return std::vector<float>(v.begin(), v.end()); }, vol.values);
  return Tensor<float>(s, std::move(values));
}

int run_predict(const std::string& ckpt, const std::string& input, const std::string& output) {
  const auto model = model_from_checkpoint<float>(load_checkpoint(ckpt));
  const Tensor<float> x = input_tensor(read_volume(input), model.config().in_channels);
  NoGradGuard no_grad;
  const auto out = model.forward(x);
  Volume labels;
  const std::size_t n = x.extent(0);
  std::vector<std::uint8_t> all;
  for (std::size_t i = 0; i < n; ++i) {
    const LabelMap m = argmax_labels(out.main, i);
    all.insert(all.end(), m.labels.begin(), m.labels.end());
  }
  labels.shape = {x.extent(2), x.extent(3), x.extent(4)};
  if (n > 1) labels.shape.insert(labels.shape.begin(), n);
  labels.values = std::move(all);
  write_volume(labels, output);
  std::cout << "wrote " << output << " " << shape_string(labels.shape) << '\n';
  return 0;
}

// ---- eval ----

LabelMap label_map(const Volume& vol, const std::string& what) {
  if (!vol.is_label_map()) throw FormatError(FormatErrorKind::BadDType, what + " is not a uint8 label map");
  if (vol.shape.size() != 3) throw ConfigurationError(what + " must have rank 3, got " + shape_string(vol.shape));
  return LabelMap{{vol.shape[0], vol.shape[1], vol.shape[2]}, std::get<std::vector<std::uint8_t>>(vol.values)};
}

int run_eval(const std::string& input, const std::string& target, std::optional<std::size_t> classes,
             double tolerance, double spacing) {
  const LabelMap pred = label_map(read_volume(input), "prediction");
  const LabelMap truth = label_map(read_volume(target), "ground truth");
  if (pred.extents != truth.extents) {
    throw ConfigurationError("prediction and ground truth extents differ");
  }
  std::size_t k = classes.value_or(0);
  if (!classes) {
    for (auto v : pred.labels) k = std::max<std::size_t>(k, v + 1u);
    for (auto v : truth.labels) k = std::max<std::size_t>(k, v + 1u);
    k = std::max<std::size_t>(k, 2);
  }
  const auto dsc = dsc_metric(pred, truth, k);
  const auto sdc = sdc_metric(pred, truth, k, tolerance, spacing);
  std::cout << std::fixed << std::setprecision(4);
  for (std::size_t c = 1; c < k; ++c) {
    std::cout << "class " << c << " DSC " << dsc[c - 1] << " SDC " << sdc[c - 1] << '\n';
  }
  std::cout << "DSC " << mean_of(dsc) << '\n' << "SDC " << mean_of(sdc) << '\n';
  return 0;
}

// ---- synth ----

int run_synth(std::uint64_t seed, std::size_t size, std::size_t classes, const std::string& output) {
  const auto c = generate_synthetic_case(seed, size, classes);
  write_volume({{size, size, size}, c.volume}, output + "_image.vol");
  write_volume({{size, size, size}, c.labels.labels}, output + "_labels.vol");
  std::cout << "wrote " << output << "_image.vol and " << output << "_labels.vol\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MedNeXt 3D segmentation toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  ModelFlags model_flags;
  std::string size = "128";
  bool csv = false;
  auto* inspect = app.add_subcommand("inspect", "parameter and FLOP table");
  model_flags.add_to(*inspect);
  inspect->add_option("--size", size, "input extents, N or DxHxW")->capture_default_str();
  inspect->add_flag("--csv", csv, "print CSV instead of a table");

  TrainFlags train_flags;
  auto* train = app.add_subcommand("train", "train on synthetic cases");
  model_flags.add_to(*train);
  train->add_option("--steps", train_flags.steps)->capture_default_str();
  train->add_option("--lr", train_flags.lr)->capture_default_str();
  train->add_option("--seed", train_flags.seed)->capture_default_str();
  train->add_option("--cases", train_flags.cases)->capture_default_str();
  train->add_option("--size", train_flags.size)->capture_default_str();
  train->add_option("--batch", train_flags.batch)->capture_default_str();
  train->add_option("--eval-every", train_flags.eval_every)->capture_default_str();
  train->add_option("--target-dsc", train_flags.target_dsc, "stop once mean DSC reaches this");
  train->add_option("--init", train_flags.init, "initial checkpoint");
  train->add_option("--output", train_flags.output, "checkpoint to write");
  train->add_option("--csv", train_flags.csv, "history CSV to write");

  std::string source, target, output, ckpt, input;
  std::uint64_t seed = 1;
  auto* upkern = app.add_subcommand("upkern", "transfer weights to a larger kernel");
  upkern->add_option("--source", source, "source checkpoint")->required();
  upkern->add_option("--target", target, "target checkpoint (default: fresh model)");
  upkern->add_option("--kernel", model_flags.kernel, "target kernel size (fresh target only)");
  upkern->add_option("--seed", seed, "initialization seed of a fresh target")->capture_default_str();
  upkern->add_option("--output", output, "checkpoint to write");

  auto* predict = app.add_subcommand("predict", "segment a volume");
  predict->add_option("--ckpt", ckpt)->required();
  predict->add_option("--input", input, "VOL1 intensity volume")->required();
  predict->add_option("--output", output, "VOL1 label map to write")->required();

  std::optional<std::size_t> eval_classes;
  double tolerance = 1.0, spacing = 1.0;
  auto* eval = app.add_subcommand("eval", "DSC and SDC of a prediction");
  eval->add_option("--input", input, "predicted label map")->required();
  eval->add_option("--target", target, "ground-truth label map")->required();
  eval->add_option("--classes", eval_classes, "class count (default: from labels)");
  eval->add_option("--tolerance", tolerance, "SDC tolerance")->capture_default_str();
  eval->add_option("--spacing", spacing, "isotropic voxel spacing")->capture_default_str();

  std::size_t synth_size = 32, synth_classes = 2;
  auto* synth = app.add_subcommand("synth", "write a synthetic case");
  synth->add_option("--seed", seed)->capture_default_str();
  synth->add_option("--size", synth_size)->capture_default_str();
  synth->add_option("--classes", synth_classes)->capture_default_str();
  synth->add_option("--output", output, "path prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << std::endl;
    return 2;
  }

  try {
    if (*inspect) return run_inspect(model_flags, size, csv);
    if (*train) return run_train(model_flags, train_flags);
    if (*upkern) return run_upkern(model_flags.kernel, source, target, output, seed);
    if (*predict) return run_predict(ckpt, input, output);
    if (*eval) return run_eval(input, target, eval_classes, tolerance, spacing);
    if (*synth) return run_synth(seed, synth_size, synth_classes, output);
  } catch (const Error& e) {
    std::cerr << "error: " << e.category() << ": " << one_line(e.what()) << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << one_line(e.what()) << std::endl;
    return 1;
  }
  return 1;
}
