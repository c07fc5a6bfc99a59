// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.
//
// usage: stainkit_acceptance <path-to-stainkit-cli>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "stainkit/checkpoint.hpp"
#include "stainkit/classical.hpp"
#include "stainkit/color_stats.hpp"
#include "stainkit/diagnostics.hpp"
#include "stainkit/image_io.hpp"
#include "stainkit/metrics.hpp"
#include "stainkit/ops.hpp"
#include "stainkit/pidr.hpp"
#include "stainkit/synthetic.hpp"
#include "stainkit/tiling.hpp"

using namespace stainkit;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = true;
  std::string failed;  // every failed condition, "; "-terminated
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      failed += what + "; ";
      pass = false;
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void criterion(int number, const std::string& title, const std::function<void(Verdict&)>& body) {
  Verdict v;
  const auto t0 = Clock::now();
  try {
    body(v);
  } catch (const std::exception& e) {
    v.require(false, std::string("exception: ") + e.what());
  }
  if (!v.pass) ++failures;
  char elapsed[32];
  std::snprintf(elapsed, sizeof elapsed, "%.1fs", seconds_since(t0));
  std::cout << (v.pass ? "[PASS]" : "[FAIL]") << " criterion " << number << ": " << title << " (" << v.failed << v.detail.str()
            << elapsed << ")" << std::endl;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double column_error(const StainMatrix& got, const StainMatrix& want) {
  return std::max(angle_degrees(got.column(0), want.column(0)), angle_degrees(got.column(1), want.column(1)));
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// --- 1 ----------------------------------------------------------------------

void gradient_correctness(Verdict& v) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_op;
  std::size_t checks = 0;
  for (const auto& c : gradcheck::op_cases()) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed * 104729 + 17);
      auto inputs = c.make_inputs(rng);
      for (const auto& t : inputs) v.require(t.numel() <= 64, c.name + " uses a tensor over 64 elements");
      const auto r = gradcheck::check(c.fn, std::move(inputs), seed);
      ++checks;
      if (r.max_relative_error > worst) {
        worst = r.max_relative_error;
        worst_op = c.name;
      }
    }
  }
  const double elapsed = seconds_since(t0);
  v.require(worst < 1e-3, "relative error " + fmt(worst) + " on " + worst_op);
  v.require(elapsed < 60.0, "took " + fmt(elapsed) + "s");
  v.detail << gradcheck::op_cases().size() << " ops x 100 seeds = " << checks << " checks, worst rel err " << fmt(worst, 3)
           << " (" << worst_op << "), ";
}

// --- 2 ----------------------------------------------------------------------

void vq_semantics(Verdict& v) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> pick_k(1, 64), pick_d(1, 16);
  std::size_t mismatches = 0, ties = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = pick_k(rng), d = pick_d(rng);
    Tensor entries = gradcheck::random_tensor({k, d}, rng);
    const Tensor token = gradcheck::random_tensor({1, d}, rng);
    // Every fourth trial duplicates a row at a higher index to force a tie.
    if (trial % 4 == 0 && k > 1) {
      auto e = entries.mutable_data();
      const std::size_t src = rng() % (k - 1), dst = src + 1 + rng() % (k - 1 - src);
      std::copy(e.begin() + src * d, e.begin() + (src + 1) * d, e.begin() + dst * d);
      ++ties;
    }
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      double dist = 0.0;
      for (std::size_t c = 0; c < d; ++c) dist += std::pow(double(token[c]) - double(entries[j * d + c]), 2);
      if (dist < best_dist) {
        best_dist = dist;
        best = j;
      }
    }
    if (nearest_entries(token, entries)[0] != best) ++mismatches;
  }
  v.require(mismatches == 0, std::to_string(mismatches) + " quantize mismatches");

  double worst_loss = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + trial % 16;
    const Tensor vec = gradcheck::random_tensor({1, d, 1, 1}, rng);
    const Codebook cb{gradcheck::random_tensor({1, d}, rng), {}};
    const float alpha = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
    double n = 0.0;
    for (std::size_t c = 0; c < d; ++c) n += std::pow(double(vec[c]) - double(cb.entries[c]), 2);
    worst_loss = std::max(worst_loss, std::abs(codebook_loss(vec, cb, alpha).item() - std::sqrt(n) * (1.0 + alpha)));
  }
  v.require(worst_loss < 1e-6, "codebook loss off by " + fmt(worst_loss));

  // With alpha = 0 only sg[f] enters, so the encoder output gets nothing;
  // raising alpha must leave the codebook gradient untouched.
  bool detached_ok = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 g(seed);
    Tensor f = gradcheck::random_tensor({2, 4, 2, 2}, g);
    Tensor e = gradcheck::random_tensor({5, 4}, g);
    f.set_requires_grad(true);
    e.set_requires_grad(true);
    auto run = [&](float alpha) {
      f.clear_grad();
      e.clear_grad();
      Tape tape;
      Tape::Scope scope(tape);
      backward(codebook_loss(f, Codebook{e, {}}, alpha));
      std::vector<float> fg(f.numel(), 0.0f);
      if (f.has_grad()) fg.assign(f.grad().begin(), f.grad().end());
      return std::pair{fg, std::vector<float>(e.grad().begin(), e.grad().end())};
    };
    const auto [f0, e0] = run(0.0f);
    const auto [f1, e1] = run(0.7f);
    for (float x : f0) detached_ok &= x == 0.0f;
    detached_ok &= e0 == e1;
    double fnorm = 0.0;
    for (float x : f1) fnorm += x * x;
    detached_ok &= fnorm > 0.0;
  }
  v.require(detached_ok, "gradient leaked through a stop-gradient");
  v.detail << "1000 quantize pairs (" << ties << " forced ties) match, codebook loss max err " << fmt(worst_loss, 3)
           << ", detached paths exactly zero, ";
}

// --- 3 and 4 -----------------------------------------------------------------

struct ToyRun {
  synthetic::TwoDomainDataset train;
  synthetic::TwoDomainDataset held_out;
  std::optional<PidrModel> model;
  std::vector<LossReport> history;
  double seconds = 0.0;
};

void toy_training(Verdict& v, ToyRun& run) {
  run.train = synthetic::two_domain_dataset(200, 64, 7);
  run.held_out = synthetic::two_domain_dataset(50, 64, 99);
  ModelConfig config;
  config.seed = 1;
  run.model.emplace(config);
  TrainOptions options;
  options.steps = 500;
  options.seed = 3;
  const auto t0 = Clock::now();
  run.history = train(*run.model, run.train.domain_a, run.train.domain_b, options);
  run.seconds = seconds_since(t0);

  auto window_mean = [&](std::size_t from, auto field) {
    double s = 0.0;
    for (std::size_t i = from; i < from + 10; ++i) s += field(run.history[i]);
    return s / 10.0;
  };
  const auto total = [](const LossReport& r) { return double(r.total); };
  const double initial = window_mean(0, total);
  const double final_total = window_mean(run.history.size() - 10, total);

  double recon = 0.0, gap = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    const auto q = make_training_batch(run.held_out.domain_a[i], run.held_out.domain_b[i], 5000 + i);
    const Tensor fa = ops::global_avg_pool(run.model->encode_color(q.a).tensor);
    const Tensor fp = ops::global_avg_pool(run.model->encode_color(q.a_prime).tensor);
    const Tensor fb = ops::global_avg_pool(run.model->encode_color(q.b).tensor);
    gap += ops::cosine_similarity(fa, fp).item() - ops::cosine_similarity(fa, fb).item();
    recon += ops::mse(run.model->reconstruct(q.a), q.a).item();
  }
  recon /= 50.0;
  gap /= 50.0;

  v.require(final_total < 0.5 * initial, "loss " + fmt(final_total) + " not below half of " + fmt(initial));
  v.require(recon < 0.01, "held-out reconstruction MSE " + fmt(recon));
  v.require(gap > 0.2, "cosine gap " + fmt(gap));
  v.require(run.seconds < 600.0, "training took " + fmt(run.seconds) + "s");
  v.detail << "loss " << fmt(initial) << " -> " << fmt(final_total) << " (" << fmt(100.0 * final_total / initial, 3)
           << "%), held-out recon MSE " << fmt(recon, 3) << ", cos gap " << fmt(gap) << " over 50 quadruples, train "
           << fmt(run.seconds, 3) << "s, ";
}

void normalization_behavior(Verdict& v, const ToyRun& run) {
  v.require(run.model.has_value(), "criterion 3 did not produce a model");
  if (!run.model) return;
  const std::size_t t = select_template(run.train.domain_a);
  const RgbImage& tpl = run.train.domain_a[t];
  const ColorHistogram th = compute_histogram(tpl);
  int closer = 0;
  double min_ssim = 1.0, mean_ssim = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const RgbImage& src = run.held_out.domain_b[i];
    const RgbImage out = normalize_image(src, tpl, *run.model);
    closer += histogram_distance(compute_histogram(out), th) < histogram_distance(compute_histogram(src), th);
    const double s = ssim(out, src);
    min_ssim = std::min(min_ssim, s);
    mean_ssim += s / 20.0;
  }
  v.require(closer >= 18, std::to_string(closer) + "/20 moved toward the template");
  v.require(min_ssim > 0.7, "SSIM to source fell to " + fmt(min_ssim));
  v.detail << "template #" << t << ", " << closer << "/20 closer in histogram distance, SSIM to source min "
           << fmt(min_ssim, 3) << " mean " << fmt(mean_ssim, 3) << ", ";
}

// --- 5 ----------------------------------------------------------------------

void template_selection(Verdict& v) {
  std::mt19937_64 rng(5150);
  int mismatches = 0, tie_sets = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RgbImage> images;
    const bool narrow = trial % 2 == 1;
    for (int i = 0; i < 20; ++i) {
      RgbImage img = trial % 3 == 0 ? synthetic::he_tile(16, rng()) : fixtures::random_image(12, 12, rng());
      // Few distinct values make exact and near ties common.
      if (narrow)
        for (auto& p : img.mutable_pixels()) p = static_cast<std::uint8_t>(p % 5);
      images.push_back(std::move(img));
    }
    // Ten images, each present twice: the minimum is always shared.
    if (trial % 5 == 0)
      for (int i = 0; i < 10; ++i) images[10 + i] = images[i];
    // Count datasets where the winning distance is shared by another image.
    const auto hists = [&] {
      std::vector<ColorHistogram> h;
      for (const auto& img : images) h.push_back(compute_histogram(img));
      return h;
    }();
    const auto mean = mean_histogram(hists);
    const std::size_t want = oracles::integer_select_template(images);
    const double best = histogram_distance(hists[want], mean);
    for (std::size_t i = 0; i < hists.size(); ++i)
      if (i != want && std::abs(histogram_distance(hists[i], mean) - best) < 1e-9) {
        ++tie_sets;
        break;
      }
    if (select_template(images) != want) ++mismatches;
  }
  v.require(mismatches == 0, std::to_string(mismatches) + "/50 template mismatches");

  double worst = 0.0;
  std::uniform_int_distribution<std::size_t> pick_bins(1, 16);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t bins = pick_bins(rng);
    auto draw = [&] {
      std::vector<double> p(bins);
      double s = 0.0;
      for (auto& x : p) {
        x = u(rng) < 0.25 ? 0.0 : u(rng);
        s += x;
      }
      if (s == 0.0) {
        p[rng() % bins] = 1.0;
        s = 1.0;
      }
      for (auto& x : p) x /= s;
      return p;
    };
    const auto p = draw(), q = draw();
    worst = std::max(worst, std::abs(wasserstein_1d(p, q) - oracles::greedy_transport_w1(p, q)));
  }
  v.require(worst < 1e-6, "W1 off by " + fmt(worst));
  v.detail << "50/50 datasets match the exact oracle (" << tie_sets << " with tied minima), 1000 W1 trials max err "
           << fmt(worst, 3) << ", ";
}

// --- 6 ----------------------------------------------------------------------

void classical_baselines(Verdict& v) {
  set_warnings_quiet(true);
  double worst_macenko = 0.0, worst_vahadane = 0.0;
  double worst_fixed[3] = {0.0, 0.0, 0.0};
  const ClassicalMethod methods[3] = {ClassicalMethod::kReinhard, ClassicalMethod::kMacenko, ClassicalMethod::kVahadane};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto stains = synthetic::random_stain_matrix(seed + 900);
    const auto tile = synthetic::planted_od_tile(64, stains, 0.01, seed + 901);
    worst_macenko = std::max(worst_macenko, column_error(macenko_estimate_stains(tile.od), stains));
    worst_vahadane = std::max(worst_vahadane, column_error(vahadane_estimate_stains(tile.od), stains));
    const RgbImage img = od_to_rgb(tile.od);
    for (int m = 0; m < 3; ++m) {
      worst_fixed[m] = std::max(worst_fixed[m], mean_abs_difference(normalize_classical(methods[m], img, img), img));
    }
  }
  set_warnings_quiet(false);
  v.require(worst_macenko < 2.0, "Macenko error " + fmt(worst_macenko) + " deg");
  v.require(worst_vahadane < 3.0, "Vahadane error " + fmt(worst_vahadane) + " deg");
  for (int m = 0; m < 3; ++m) {
    v.require(worst_fixed[m] <= 2.0, std::string(method_name(methods[m])) + " fixed point " + fmt(worst_fixed[m]));
  }
  v.detail << "worst of 100 seeds: Macenko " << fmt(worst_macenko, 3) << " deg, Vahadane " << fmt(worst_vahadane, 3)
           << " deg; fixed point reinhard " << fmt(worst_fixed[0], 3) << ", macenko " << fmt(worst_fixed[1], 3)
           << ", vahadane " << fmt(worst_fixed[2], 3) << " levels, ";
}

// --- 7 ----------------------------------------------------------------------

void metric_properties(Verdict& v) {
  double worst_identity = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (const RgbImage& img : {synthetic::he_tile(64, seed), fixtures::random_image(96, 80, seed)}) {
      worst_identity = std::max({worst_identity, std::abs(ssim(img, img) - 1.0), std::abs(ms_ssim(img, img) - 1.0),
                                 std::abs(uqi(img, img) - 1.0)});
    }
  }
  v.require(worst_identity <= 1e-9, "identical pair scored 1 - " + fmt(worst_identity));

  const SsimOptions o;
  const double c1 = std::pow(o.k1 * o.dynamic_range, 2);
  double worst_closed = 0.0;
  for (auto [a, b] : {std::pair{100.0, 100.0}, std::pair{0.0, 255.0}, std::pair{30.0, 200.0}, std::pair{7.0, 8.0}}) {
    const Plane pa{16, 16, std::vector<double>(256, a)}, pb{16, 16, std::vector<double>(256, b)};
    worst_closed = std::max(worst_closed, std::abs(ssim(pa, pb) - (2 * a * b + c1) / (a * a + b * b + c1)));
  }
  v.require(worst_closed < 1e-9, "constant closed form off by " + fmt(worst_closed));

  bool monotone = true;
  std::ostringstream values;
  for (const RgbImage& base : {fixtures::textured_gray(192), synthetic::he_tile(192, 4), synthetic::he_tile(64, 5)}) {
    double previous = 2.0;
    for (double sigma : {2.0, 8.0, 32.0}) {
      const double s = ms_ssim(base, fixtures::add_hash_noise(base, sigma, 11));
      monotone &= s < previous;
      previous = s;
    }
  }
  v.require(monotone, "MS-SSIM not strictly decreasing in noise");
  const RgbImage base = fixtures::textured_gray(192);
  v.detail << "identity max dev " << fmt(worst_identity, 2) << ", closed form max dev " << fmt(worst_closed, 2)
           << ", MS-SSIM at sigma 2/8/32 = " << fmt(ms_ssim(base, fixtures::add_hash_noise(base, 2.0, 11))) << "/"
           << fmt(ms_ssim(base, fixtures::add_hash_noise(base, 8.0, 11))) << "/"
           << fmt(ms_ssim(base, fixtures::add_hash_noise(base, 32.0, 11))) << ", ";
}

// --- 8 ----------------------------------------------------------------------

void tiling(Verdict& v) {
  const auto discard = tile_origins(600, 600, {256, EdgePolicy::kDiscard});
  const auto retain = tile_origins(600, 600, {256, EdgePolicy::kRetain});
  v.require(discard.size() == 4, "discard gave " + std::to_string(discard.size()) + " tiles");
  v.require(retain.size() == 9, "retain gave " + std::to_string(retain.size()) + " tiles");
  v.require(retain.size() == 9 && retain[2].x == 344 && retain[6].y == 344, "final offsets are not 344");

  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> extent(1, 1200), tile(1, 400);
  int triples = 0, failures_here = 0;
  while (triples < 100) {
    const std::size_t w = extent(rng), h = extent(rng), ts = tile(rng);
    if (w < ts || h < ts) continue;  // retain mode needs at least one full tile per axis
    ++triples;
    for (bool keep : {true, false}) {
      const auto origins = tile_origins(w, h, {ts, keep ? EdgePolicy::kRetain : EdgePolicy::kDiscard});
      std::vector<TileOrigin> expected;
      for (std::size_t y : oracles::tile_starts(h, ts, keep))
        for (std::size_t x : oracles::tile_starts(w, ts, keep)) expected.push_back({x, y});
      const auto cover = oracles::paint_tiles(w, h, ts, origins);
      const bool ok = origins == expected && cover.in_bounds && (!keep || cover.uncovered == 0);
      failures_here += !ok;
    }
  }
  v.require(failures_here == 0, std::to_string(failures_here) + " tiling layouts disagree with the oracle");
  v.detail << "600x600: " << discard.size() << " discard / " << retain.size()
           << " retain tiles, last offset 344; 100 random triples x 2 modes agree on offsets, bounds and coverage, ";
}

// --- 9 ----------------------------------------------------------------------

void determinism(Verdict& v, const fs::path& cli, const ToyRun& run) {
  const fs::path root = fs::temp_directory_path() / ("stainkit_acceptance_" + std::to_string(std::random_device{}()));
  fs::create_directories(root / "in");
  for (std::size_t i = 0; i < 6; ++i) {
    write_png(root / "in" / ("tile" + std::to_string(i) + ".png"), run.held_out.domain_b[20 + i]);
  }
  write_png(root / "template.png", run.held_out.domain_a[0]);
  if (run.model) save_checkpoint(root / "model.stpc", *run.model);

  std::vector<std::string> methods = {"reinhard", "macenko", "vahadane"};
  if (run.model) methods.push_back("pidr");
  std::size_t compared = 0;
  for (const auto& method : methods) {
    const fs::path out = root / ("out_" + method);
    {
      std::ofstream config(root / (method + ".json"));
      config << "{\"input_dir\": \"" << (root / "in").string() << "\", \"output_dir\": \"" << out.string()
             << "\", \"template\": \"" << (root / "template.png").string() << "\", \"method\": \"" << method
             << "\", \"checkpoint\": \"" << (root / "model.stpc").string() << "\", \"seed\": 17, \"threads\": 2}";
    }
    const std::string command =
        "\"" + cli.string() + "\" normalize --quiet --config \"" + (root / (method + ".json")).string() + "\" 2>/dev/null";
    std::vector<std::map<std::string, std::string>> outputs;
    std::vector<std::string> mappings;
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int status = std::system(command.c_str());
      v.require(status == 0, method + " run exited with status " + std::to_string(status));
      const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
      mappings.push_back(manifest["mapping"].dump());
      std::map<std::string, std::string> bytes;
      for (const auto& entry : manifest["mapping"]) {
        if (entry["status"] == "ok") bytes[entry["output"].get<std::string>()] = slurp(entry["output"].get<std::string>());
      }
      outputs.push_back(std::move(bytes));
      if (attempt == 0) fs::remove_all(out);
    }
    v.require(outputs[0].size() == 6, method + " produced " + std::to_string(outputs[0].size()) + " outputs");
    v.require(outputs[0] == outputs[1], method + " outputs differ between runs");
    v.require(mappings[0] == mappings[1], method + " manifest mappings differ between runs");
    compared += outputs[0].size();
  }
  std::error_code ec;
  fs::remove_all(root, ec);
  v.detail << "two CLI runs per method (";
  for (std::size_t i = 0; i < methods.size(); ++i) v.detail << (i ? ", " : "") << methods[i];
  v.detail << "): " << compared << " output images and all manifest mappings byte-identical, ";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: " << argv[0] << " <path-to-stainkit-cli>\n";
    return 2;
  }
  const fs::path cli = argv[1];
  ToyRun run;
  criterion(1, "gradient correctness of every differentiable op", gradient_correctness);
  criterion(2, "vector quantization semantics", vq_semantics);
  criterion(3, "toy training convergence", [&](Verdict& v) { toy_training(v, run); });
  criterion(4, "normalization behavior after toy training", [&](Verdict& v) { normalization_behavior(v, run); });
  criterion(5, "template selection and 1-D Wasserstein distance", template_selection);
  criterion(6, "classical baselines", classical_baselines);
  criterion(7, "quality metrics", metric_properties);
  criterion(8, "tiling", tiling);
  criterion(9, "end-to-end determinism of normalize", [&](Verdict& v) { determinism(v, cli, run); });
  if (failures == 0)
    std::cout << "all 9 criteria passed" << std::endl;
  else
    std::cout << failures << " of 9 criteria failed" << std::endl;
  return failures == 0 ? 0 : 1;
}
