// Copyright 2026 The mednext-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// `acceptance 1 3 7` runs a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "support/oracles.hpp"

using namespace mednext;
using namespace mednext::testing;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

struct Entry {
  const char* preset;
  std::size_t kernel;
  double reference;
};

// ---- 1. parameter counts ----

Verdict parameter_counts() {
  const Entry table[] = {{"S", 3, 5.6},  {"S", 5, 5.9},  {"B", 3, 10.5}, {"B", 5, 11.0},
                         {"M", 3, 17.6}, {"M", 5, 18.3}, {"L", 3, 61.8}, {"L", 5, 63.0}};
  Verdict v;
  std::ostringstream os;
  os.precision(4);
  double worst = 0;
  for (const auto& e : table) {
    const MedNeXtModel<float> model(ModelConfig::from_preset(e.preset, e.kernel));
    const double m = static_cast<double>(count_parameters(model)) / 1e6;
    const double dev = (m - e.reference) / e.reference;
    worst = std::max(worst, std::abs(dev));
    if (std::abs(dev) > 0.05) v.pass = false;
    os << e.preset << e.kernel << "=" << m << "M ";
  }
  os << "max deviation " << 100 * worst << "% (tolerance 5%)";
  v.detail = os.str();
  return v;
}

// ---- 2. FLOP counts ----

Verdict flop_counts() {
  Verdict v;
  const double factor = calibrate_flop_factor();
  const Entry table[] = {{"S", 5, 169}, {"B", 3, 170}, {"B", 5, 208}, {"M", 3, 248},
                         {"M", 5, 308}, {"L", 3, 500}, {"L", 5, 564}};
  std::ostringstream os;
  os.precision(4);
  os << "factor " << factor << "; ";
  double worst = 0;
  for (const auto& e : table) {
    const double g = count_flops(ModelConfig::from_preset(e.preset, e.kernel), {128, 128, 128}, factor) / 1e9;
    const double dev = (g - e.reference) / e.reference;
    worst = std::max(worst, std::abs(dev));
    if (std::abs(dev) > 0.15) v.pass = false;
    os << e.preset << e.kernel << "=" << g << "G ";
  }
  os << "max deviation " << 100 * worst << "% (tolerance 15%)";
  v.detail = os.str();
  return v;
}

// ---- 3. gradients ----

using Fn = std::function<Tensor<double>(std::vector<Tensor<double>>&)>;

Verdict gradients() {
  struct Case {
    std::string name;
    std::vector<Tensor<double>> inputs;
    Fn f;
  };
  std::vector<Case> cases;
  cases.push_back({"add/mul/scale/sum/mean",
                   {random_tensor({2, 3, 4}, 1), random_tensor({2, 3, 4}, 2)},
                   [](auto& in) { return add(mean(mul(in[0], in[1])), probe(scale(add(in[0], in[1]), 0.7))); }});
  cases.push_back({"softmax", {random_tensor({1, 4, 2, 2, 2}, 3, -2, 2)},
                   [](auto& in) { return probe(softmax(in[0], 1)); }});
  cases.push_back({"gelu", {random_tensor({2, 3, 4}, 4, -3, 3)}, [](auto& in) { return probe(gelu(in[0])); }});
  cases.push_back({"conv3d dense",
                   {random_tensor({1, 2, 4, 3, 4}, 5), random_tensor({3, 2, 3, 3, 3}, 6), random_tensor({3}, 7)},
                   [](auto& in) { return probe(conv3d(in[0], in[1], in[2], ConvSpec::centered(3))); }});
  cases.push_back({"conv3d depthwise stride 2",
                   {random_tensor({1, 2, 4, 4, 4}, 8), random_tensor({2, 1, 3, 3, 3}, 9), random_tensor({2}, 10)},
                   [](auto& in) { return probe(conv3d(in[0], in[1], in[2], ConvSpec::centered(3, 2, 2))); }});
  cases.push_back({"conv3d pointwise stride 2",
                   {random_tensor({2, 3, 4, 4, 2}, 11), random_tensor({2, 3, 1, 1, 1}, 12), random_tensor({2}, 13)},
                   [](auto& in) { return probe(conv3d(in[0], in[1], in[2], ConvSpec::centered(1, 2))); }});
  cases.push_back({"conv3d_transposed depthwise",
                   {random_tensor({1, 2, 2, 2, 2}, 14), random_tensor({2, 1, 3, 3, 3}, 15), random_tensor({2}, 16)},
                   [](auto& in) { return probe(conv3d_transposed(in[0], in[1], in[2], ConvSpec::centered(3, 2, 2))); }});
  cases.push_back({"conv3d_transposed pointwise",
                   {random_tensor({1, 4, 2, 2, 2}, 17), random_tensor({4, 2, 1, 1, 1}, 18), random_tensor({2}, 19)},
                   [](auto& in) { return probe(conv3d_transposed(in[0], in[1], in[2], ConvSpec::centered(1, 2))); }});
  cases.push_back({"group_norm",
                   {random_tensor({2, 4, 2, 3, 2}, 20), random_tensor({4}, 21), random_tensor({4}, 22)},
                   [](auto& in) { return probe(group_norm(in[0], 2, in[1], in[2])); }});
  cases.push_back({"trilinear_resize",
                   {random_tensor({1, 2, 3, 2, 3}, 23)},
                   [](auto& in) { return probe(trilinear_resize(in[0], {4, 3, 4}, true)); }});
  {
    const std::vector<LabelMap> t{box_map({4, 4, 4}, {1, 1, 1}, {3, 3, 4}), box_map({4, 4, 4}, {0, 2, 0}, {4, 4, 2}, 2)};
    const std::vector<LabelMap> half{box_map({2, 2, 2}, {0, 0, 0}, {1, 2, 2}), box_map({2, 2, 2}, {1, 1, 0}, {2, 2, 2}, 2)};
    cases.push_back({"dice+ce loss",
                     {random_tensor({2, 3, 4, 4, 4}, 24, -2, 2), random_tensor({2, 3, 2, 2, 2}, 25, -2, 2)},
                     [t](auto& in) {
                       const std::vector<double> w{2.0 / 3, 1.0 / 3};
                       return dice_ce_loss(std::vector<Tensor<double>>{in[0], in[1]}, std::span<const LabelMap>(t),
                                           std::span<const double>(w));
                     }});
  }
  for (BlockKind kind : {BlockKind::Standard, BlockKind::Down, BlockKind::Up}) {
    const std::size_t c = kind == BlockKind::Up ? 4 : 2;
    auto p = std::make_shared<BlockParams<double>>(make_block_params<double>(kind, c, 2, 3));
    randomize_block(*p, 30 + static_cast<int>(kind));
    const std::size_t ext = kind == BlockKind::Up ? 2 : 4;
    Case bc{std::string(block_kind_name(kind)) + " block", {random_tensor({1, c, ext, ext, ext}, 40)}, nullptr};
    p->for_each_parameter([&](const char*, const Tensor<double>& t) { bc.inputs.push_back(t); });
    bc.f = [p](auto& in) { return probe(block_forward(in[0], *p)); };
    cases.push_back(std::move(bc));
  }

  Verdict v;
  double worst = 0;
  std::string worst_name;
  for (auto& c : cases) {
    const auto r = grad_check(c.inputs, c.f);
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = c.name + " (" + r.worst + ")";
    }
    if (!(r.max_rel_error < 1e-4)) v.pass = false;
  }
  std::ostringstream os;
  os << cases.size() << " cases, max relative error " << worst << " in " << worst_name << " (tolerance 1e-4)";
  v.detail = os.str();
  return v;
}

// ---- 4. shapes ----

Verdict shapes() {
  Verdict v;
  std::ostringstream fail;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) {
      v.pass = false;
      fail << what << "; ";
    }
  };
  const ConvSpec pointwise{};
  for (const char* preset : {"S", "B", "M", "L"}) {
    for (std::size_t k : {3, 5}) {
      const std::string tag = std::string(preset) + std::to_string(k);
      const auto model = build_model<float>(ModelConfig::from_preset(preset, k), 1);
      const auto x = random_tensor<float>({1, 1, 32, 32, 32}, 2);
      NoGradGuard no_grad;
      // Replay the stage sequence through the public accessors to observe
      // every intermediate resolution and width.
      Tensor<float> h = conv3d(x, model.stem().weight, model.stem().bias, pointwise);
      std::vector<Tensor<float>> skips;
      for (std::size_t s = 1; s <= 5; ++s) {
        for (const auto& b : model.stage_blocks(s)) h = mednext_block_forward(h, b);
        const std::size_t n = 32 >> (s - 1);
        expect(h.shape() == Shape{1, 32u << (s - 1), n, n, n}, tag + " stage" + std::to_string(s) + " " + shape_string(h.shape()));
        if (s <= 4) {
          skips.push_back(h);
          h = down_block_forward(h, model.down_block(s));
        }
      }
      for (std::size_t s = 6; s <= 9; ++s) {
        h = add(up_block_forward(h, model.up_block(s)), skips[9 - s]);
        for (const auto& b : model.stage_blocks(s)) h = mednext_block_forward(h, b);
        const std::size_t n = 32 >> (9 - s);
        expect(h.shape() == Shape{1, 32u << (9 - s), n, n, n}, tag + " stage" + std::to_string(s) + " " + shape_string(h.shape()));
      }
      const auto head = model.head(9);
      const auto replay = conv3d(h, head->weight, head->bias, pointwise);
      const auto out = model.forward(x);
      expect(bitwise_equal(replay, out.main), tag + " replay differs from forward");
      expect(out.main.shape() == Shape{1, 2, 32, 32, 32}, tag + " main " + shape_string(out.main.shape()));
      expect(out.deep_supervision.size() == 3, tag + " deep supervision count");
      for (std::size_t i = 0; i < out.deep_supervision.size(); ++i) {
        const std::size_t n = 16 >> i;
        expect(out.deep_supervision[i].shape() == Shape{1, 2, n, n, n},
               tag + " ds" + std::to_string(i) + " " + shape_string(out.deep_supervision[i].shape()));
      }
    }
  }
  for (std::size_t k : {1, 3, 5, 7}) {
    const auto y = conv3d(random_tensor<float>({1, 2, 9, 6, 5}, 3), random_tensor<float>({2, 1, k, k, k}, 4),
                          ConvSpec::centered(k, 1, 2));
    expect(y.shape() == Shape{1, 2, 9, 6, 5}, "padded k=" + std::to_string(k) + " " + shape_string(y.shape()));
  }
  v.detail = v.pass ? "8 configurations: encoder 32..512 at 1..1/16, ds at 1/2 1/4 1/8, padding preserves extents"
                    : fail.str();
  return v;
}

// ---- 5. UpKern ----

std::vector<double> interp_1d(const std::vector<double>& v, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = static_cast<double>(i) * static_cast<double>(v.size() - 1) / static_cast<double>(n - 1);
    const std::size_t lo = std::min(static_cast<std::size_t>(pos), v.size() - 2);
    const double t = pos - static_cast<double>(lo);
    out[i] = (1 - t) * v[lo] + t * v[lo + 1];
  }
  return out;
}

Verdict upkern() {
  Verdict v;
  std::ostringstream fail;
  auto cfg3 = ModelConfig::from_preset("B", 3);
  cfg3.base_channels = 8;
  auto cfg5 = cfg3;
  cfg5.kernel = 5;
  const auto src = build_model<float>(cfg3, 1);
  const auto ck = make_checkpoint(src);

  if (!(make_checkpoint(upkern_transfer(ck, build_model<float>(cfg3, 2))) == ck)) {
    v.pass = false;
    fail << "degenerate transfer not identity; ";
  }

  TransferReport report;
  const auto up = upkern_transfer(ck, build_model<float>(cfg5, 3), &report);
  const std::set<std::string> resampled(report.resampled.begin(), report.resampled.end());
  for (const auto& [name, t] : up.named_parameters()) {
    const auto before = src.parameter(name);
    if (!resampled.contains(name)) {
      if (!bitwise_equal(t, before)) {
        v.pass = false;
        fail << name << " not copied verbatim; ";
      }
    } else if (!name.ends_with(".dw.weight")) {
      v.pass = false;
      fail << name << " resampled but not depthwise; ";
    }
  }

  // Separable kernels: resampling must equal the outer product of 1-D interpolations.
  const std::vector<double> fd{0.3, -1.0, 2.0}, fh{1.0, 0.5, -0.25}, fw{-2.0, 0.0, 1.5};
  Tensor<double> w({1, 1, 3, 3, 3});
  for (std::size_t d = 0; d < 3; ++d)
    for (std::size_t h = 0; h < 3; ++h)
      for (std::size_t x = 0; x < 3; ++x) w.at(0, 0, d, h, x) = fd[d] * fh[h] * fw[x];
  const auto r = resample_kernel(w, {5, 5, 5});
  const auto gd = interp_1d(fd, 5), gh = interp_1d(fh, 5), gw = interp_1d(fw, 5);
  double err = 0;
  for (std::size_t d = 0; d < 5; ++d)
    for (std::size_t h = 0; h < 5; ++h)
      for (std::size_t x = 0; x < 5; ++x) err = std::max(err, std::abs(r.at(0, 0, d, h, x) - gd[d] * gh[h] * gw[x]));
  if (!(err < 1e-12)) {
    v.pass = false;
    fail << "separable oracle error " << err << "; ";
  }

  const auto twice = upkern_transfer(ck, up);
  if (!(make_checkpoint(twice) == make_checkpoint(up))) {
    v.pass = false;
    fail << "not idempotent; ";
  }
  std::ostringstream os;
  os << report.summary() << ", separable oracle error " << err;
  v.detail = v.pass ? os.str() : fail.str();
  return v;
}

// ---- 6. learnability ----

Verdict learnability() {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  auto cfg3 = ModelConfig::from_preset("S", 3);
  cfg3.base_channels = 8;
  auto cfg5 = cfg3;
  cfg5.kernel = 5;
  const auto cases = make_dataset({4, 32, 2, 1});
  TrainOptions opts;
  opts.steps = 300;
  opts.seed = 1;
  opts.optimizer.lr = 1e-3;
  opts.stop_at_dsc = 0.95;

  const auto k3 = train_loop(build_model<float>(cfg3, 1), cases, opts);
  const auto upk = train_loop(upkern_transfer(make_checkpoint(k3.model), build_model<float>(cfg5, 1)), cases, opts);
  const auto rnd = train_loop(build_model<float>(cfg5, 1), cases, opts);

  auto steps = [](const auto& r) {
    return r.steps_to_target ? std::to_string(*r.steps_to_target) : "not reached (dsc " + std::to_string(r.final_dsc) + ")";
  };
  Verdict v;
  v.pass = k3.steps_to_target.has_value() && upk.steps_to_target.has_value() &&
           (!rnd.steps_to_target || *upk.steps_to_target <= *rnd.steps_to_target);
  std::ostringstream os;
  os << "k3 steps to DSC 0.95: " << steps(k3) << "; k5 UpKern: " << steps(upk) << "; k5 random: " << steps(rnd)
     << "; " << std::chrono::duration_cast<std::chrono::seconds>(Clock::now() - t0).count() << " s";
  v.detail = os.str();
  return v;
}

// ---- 7. metrics ----

Verdict metrics() {
  Verdict v;
  std::ostringstream os;
  const Extents3 e{12, 12, 12};
  const auto a = box_map(e, {3, 3, 3}, {7, 7, 7});
  const auto disjoint = box_map(e, {8, 8, 8}, {11, 11, 11});
  const auto shifted = box_map(e, {3, 3, 5}, {7, 7, 9});  // half of a
  LabelMap dil = a;
  for (std::size_t d = 0; d < 12; ++d)
    for (std::size_t h = 0; h < 12; ++h)
      for (std::size_t w = 0; w < 12; ++w) {
        const int offs[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        for (const auto& o : offs) {
          const int nd = static_cast<int>(d) + o[0], nh = static_cast<int>(h) + o[1], nw = static_cast<int>(w) + o[2];
          if (nd >= 0 && nh >= 0 && nw >= 0 && nd < 12 && nh < 12 && nw < 12 &&
              a.at(static_cast<std::size_t>(nd), static_cast<std::size_t>(nh), static_cast<std::size_t>(nw))) {
            dil.labels[dil.index(d, h, w)] = 1;
          }
        }
      }
  struct Check {
    const char* name;
    double got, want;
  };
  const Check checks[] = {
      {"DSC identical", dsc_metric(a, a, 2)[0], 1.0},
      {"DSC disjoint", dsc_metric(a, disjoint, 2)[0], 0.0},
      {"DSC half overlap", dsc_metric(a, shifted, 2)[0], 0.5},
      {"SDC identical", sdc_metric(a, a, 2)[0], 1.0},
      {"SDC disjoint", sdc_metric(a, disjoint, 2)[0], 0.0},
      {"SDC 1-voxel dilation at tolerance 1", sdc_metric(a, dil, 2, 1.0)[0], 1.0},
  };
  for (const auto& c : checks) {
    if (c.got != c.want) {
      v.pass = false;
      os << c.name << " = " << c.got << " (want " << c.want << "); ";
    }
  }
  if (v.pass) os << "6 exact examples";
  v.detail = os.str();
  return v;
}

// ---- 8. serialization ----

Verdict serialization() {
  Verdict v;
  std::ostringstream fail;
  const auto model = build_model<float>(ModelConfig::from_preset("S", 3), 1);
  const auto ck = make_checkpoint(model);
  const auto bytes = encode_checkpoint(ck);
  const auto back = decode_checkpoint(bytes);
  if (!(back == ck) || encode_checkpoint(back) != bytes) {
    v.pass = false;
    fail << "round trip differs; ";
  }
  const auto restored = model_from_checkpoint<float>(back);
  {
    NoGradGuard no_grad;
    const auto x = random_tensor<float>({1, 1, 16, 16, 16}, 2);
    if (!bitwise_equal(model.forward(x).main, restored.forward(x).main)) {
      v.pass = false;
      fail << "restored model predicts differently; ";
    }
  }

  auto expect_kind = [&](std::vector<char> b, FormatErrorKind want, const char* what) {
    try {
      decode_checkpoint(b);
      v.pass = false;
      fail << what << " accepted; ";
    } catch (const FormatError& e) {
      if (e.kind() != want) {
        v.pass = false;
        fail << what << " gave " << format_error_kind_name(e.kind()) << "; ";
      }
    }
  };
  auto cut = bytes;
  cut.resize(bytes.size() / 2);
  expect_kind(cut, FormatErrorKind::Truncated, "truncated");
  auto magic = bytes;
  magic[1] = 'X';
  expect_kind(magic, FormatErrorKind::BadMagic, "bad magic");
  auto version = bytes;
  version[4] = 9;
  expect_kind(version, FormatErrorKind::UnsupportedVersion, "bad version");
  Checkpoint two;
  two.entries = {{"a", {1}, std::vector<float>{1}}, {"b", {1}, std::vector<float>{2}}};
  auto dup = encode_checkpoint(two);
  dup[14 + 17 + 2] = 'a';
  expect_kind(dup, FormatErrorKind::DuplicateName, "duplicate name");
  auto trailing = bytes;
  trailing.push_back(0);
  expect_kind(trailing, FormatErrorKind::TrailingData, "trailing bytes");
  try {
    auto cfg = ModelConfig::from_preset("S", 5);
    validate_checkpoint(ck, cfg);
    v.pass = false;
    fail << "k3 checkpoint validated as k5; ";
  } catch (const FormatError& e) {
    if (e.kind() != FormatErrorKind::ShapeMismatch) {
      v.pass = false;
      fail << "shape mismatch gave " << format_error_kind_name(e.kind()) << "; ";
    }
  }
  std::ostringstream os;
  os << bytes.size() << " bytes, " << ck.entries.size() << " tensors bitwise equal; 6 corruptions typed";
  v.detail = v.pass ? os.str() : fail.str();
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const std::pair<const char*, Verdict (*)()> criteria[] = {
      {"parameter counts", parameter_counts}, {"FLOP counts", flop_counts},
      {"gradient correctness", gradients},     {"shape and channel plan", shapes},
      {"UpKern contract", upkern},             {"desk-scale learnability", learnability},
      {"metric correctness", metrics},         {"serialization", serialization},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  bool all = true;
  for (int i = 0; i < 8; ++i) {
    if (!selected.empty() && !selected.contains(i + 1)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all = all && v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " " << criteria[i].first << ": "
              << v.detail << std::endl;
  }
  return all ? 0 : 1;
}
