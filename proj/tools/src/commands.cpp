#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "stainkit/checkpoint.hpp"
#include "stainkit/classical.hpp"
#include "stainkit/color_stats.hpp"
#include "stainkit/diagnostics.hpp"
#include "stainkit/image_io.hpp"
#include "stainkit/metrics.hpp"

#ifndef STAINKIT_VERSION
#define STAINKIT_VERSION "unknown"
#endif

namespace stainkit::cli {
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string tool_version() { return STAINKIT_VERSION; }

namespace {

void log(const std::string& message) { std::cerr << "[stainkit] " << message << '\n'; }

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

// Regular files directly inside dir, sorted by name. Non-images are kept so
// that they surface as skip records instead of vanishing silently.
std::vector<fs::path> list_files(const fs::path& dir) {
  if (dir.empty()) throw Error("no input directory given");
  if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

void ensure_directory(const fs::path& dir) {
  if (dir.empty()) throw Error("no output directory given");
  fs::create_directories(dir);
}

// Runs work(i) for i in [0, n) on up to `threads` workers. Results are handed
// to sink(i, result) on the calling thread only, which is therefore the single
// place that touches the filesystem. At most 2·threads results wait at once.
template <typename Result>
void run_pool(std::size_t n, std::size_t threads, const std::function<Result(std::size_t)>& work,
              const std::function<void(std::size_t, Result&&)>& sink) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) sink(i, work(i));
    return;
  }
  const std::size_t capacity = 2 * threads;
  std::mutex mutex;
  std::condition_variable ready, space;
  std::deque<std::pair<std::size_t, Result>> queue;
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        Result r = work(i);
        std::unique_lock lock(mutex);
        space.wait(lock, [&] { return queue.size() < capacity; });
        queue.emplace_back(i, std::move(r));
        ready.notify_one();
      }
    });
  }
  for (std::size_t done = 0; done < n; ++done) {
    std::pair<std::size_t, Result> item;
    {
      std::unique_lock lock(mutex);
      ready.wait(lock, [&] { return !queue.empty(); });
      item = std::move(queue.front());
      queue.pop_front();
      space.notify_one();
    }
    sink(item.first, std::move(item.second));
  }
  for (auto& t : pool) t.join();
}

json manifest_header(const std::string& command, const RunConfig& config) {
  return {{"tool", "stainkit"},
          {"version", tool_version()},
          {"command", command},
          {"seed", config.seed},
          {"config", json::parse(serialize_run_config(config))}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

struct LoadedImage {
  fs::path path;
  std::optional<RgbImage> image;
  std::string error;
};

LoadedImage try_read(const fs::path& path) {
  try {
    return {path, read_image(path), {}};
  } catch (const std::exception& e) {
    return {path, std::nullopt, e.what()};
  }
}

fs::path output_name(const fs::path& output_dir, const fs::path& input) {
  return output_dir / (input.stem().string() + ".png");
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_select_template(const RunConfig& config) {
  const auto files = list_files(config.input_dir);
  std::vector<fs::path> paths;
  std::vector<ColorHistogram> histograms;
  for (const auto& f : files) {
    auto loaded = try_read(f);
    if (!loaded.image) {
      log("skipping " + f.string() + ": " + loaded.error);
      continue;
    }
    paths.push_back(f);
    histograms.push_back(compute_histogram(*loaded.image, config.histogram_bins));
  }
  if (histograms.empty()) throw Error("no decodable images in " + config.input_dir);
  const std::size_t best = select_template(histograms);
  const fs::path dir = config.output_dir.empty() ? paths[best].parent_path() : fs::path(config.output_dir);
  ensure_directory(dir);
  {
    std::ofstream out(dir / "template_histogram.txt");
    write_histogram_text(out, histograms[best]);
  }
  {
    std::ofstream out(dir / "mean_histogram.txt");
    write_histogram_text(out, mean_histogram(histograms));
  }
  std::cout << paths[best].string() << '\n';
  return paths.size() == files.size() ? kExitOk : kExitPartial;
}

int cmd_tile(const RunConfig& config) {
  const auto start = Clock::now();
  const auto files = list_files(config.input_dir);
  const fs::path out_dir = config.output_dir;
  ensure_directory(out_dir);
  json mapping = json::array();
  bool skipped = false;
  for (const auto& f : files) {
    json entry = {{"input", f.string()}};
    try {
      const RgbImage img = read_image(f);
      json outputs = json::array();
      for (const auto& tile : tile_image(img, config.tile)) {
        const fs::path out = out_dir / (f.stem().string() + "_x" + std::to_string(tile.origin.x) + "_y" +
                                        std::to_string(tile.origin.y) + ".png");
        write_png(out, tile.image);
        outputs.push_back({{"output", out.string()}, {"x", tile.origin.x}, {"y", tile.origin.y}});
      }
      entry["status"] = "ok";
      entry["tiles"] = std::move(outputs);
    } catch (const std::exception& e) {
      entry["status"] = "skipped";
      entry["error"] = e.what();
      skipped = true;
      log("skipping " + f.string() + ": " + e.what());
    }
    mapping.push_back(std::move(entry));
  }
  json manifest = manifest_header("tile", config);
  manifest["mapping"] = std::move(mapping);
  manifest["timings"] = {{"total_ms", elapsed_ms(start)}};
  write_json(out_dir / "manifest.json", manifest);
  return skipped ? kExitPartial : kExitOk;
}

int cmd_normalize(const RunConfig& config) {
  const auto start = Clock::now();
  const auto method_name = config.method;
  const bool use_model = method_name == "pidr";
  const auto classical = parse_classical_method(method_name);
  if (!use_model && !classical) {
    throw Error("unknown method \"" + method_name + "\" (expected reinhard, macenko, vahadane or pidr)");
  }
  std::optional<PidrModel> model;
  if (use_model) {
    if (config.checkpoint.empty()) throw Error("method pidr needs a trained checkpoint (--checkpoint)");
    if (!fs::exists(config.checkpoint)) throw Error("checkpoint not found: " + config.checkpoint);
    model.emplace(load_checkpoint(config.checkpoint));
  }

  const auto files = list_files(config.input_dir);
  const fs::path out_dir = config.output_dir;
  ensure_directory(out_dir);
  json manifest = manifest_header("normalize", config);
  if (files.empty()) {
    warn("input directory " + config.input_dir + " is empty; nothing to normalize");
    manifest["template"] = nullptr;
    manifest["mapping"] = json::array();
    manifest["timings"] = {{"total_ms", elapsed_ms(start)}};
    write_json(out_dir / "manifest.json", manifest);
    return kExitOk;
  }

  // Template: explicit path, or the histogram-selected input.
  fs::path template_path;
  RgbImage template_image;
  if (config.template_path.empty() || config.template_path == "auto") {
    std::vector<fs::path> paths;
    std::vector<ColorHistogram> histograms;
    for (const auto& f : files) {
      auto loaded = try_read(f);
      if (!loaded.image) continue;
      paths.push_back(f);
      histograms.push_back(compute_histogram(*loaded.image, config.histogram_bins));
    }
    if (histograms.empty()) throw Error("template \"auto\" needs at least one decodable input image");
    template_path = paths[select_template(histograms)];
  } else {
    template_path = config.template_path;
  }
  template_image = read_image(template_path);
  log("template: " + template_path.string());

  std::optional<ClassicalTarget> target;
  if (classical) target = fit_classical_target(*classical, template_image);

  struct Outcome {
    std::optional<RgbImage> image;
    std::string error;
    double ms = 0.0;
  };
  const std::function<Outcome(std::size_t)> work = [&](std::size_t i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      const RgbImage src = read_image(files[i]);
      o.image = use_model ? normalize_image(src, template_image, *model) : apply_classical(*target, src);
    } catch (const std::exception& e) {
      o.error = e.what();
    }
    o.ms = elapsed_ms(t0);
    return o;
  };

  std::vector<json> entries(files.size());
  json per_file = json::object();
  std::map<fs::path, std::size_t> claimed;  // output path -> input index
  bool skipped = false;
  const std::function<void(std::size_t, Outcome&&)> sink = [&](std::size_t i, Outcome&& o) {
    json entry = {{"input", files[i].string()}};
    const fs::path out = output_name(out_dir, files[i]);
    if (o.image && claimed.contains(out)) {
      o.error = "output name " + out.filename().string() + " already produced by " +
                files[claimed.at(out)].filename().string();
      o.image.reset();
    }
    if (o.image) {
      try {
        write_png(out, *o.image);
        claimed.emplace(out, i);
        entry["output"] = out.string();
        entry["status"] = "ok";
      } catch (const std::exception& e) {
        o.error = e.what();
        o.image.reset();
      }
    }
    if (!o.image) {
      entry["output"] = nullptr;
      entry["status"] = "skipped";
      entry["error"] = o.error;
      skipped = true;
      log("skipping " + files[i].string() + ": " + o.error);
    }
    per_file[files[i].filename().string()] = o.ms;
    entries[i] = std::move(entry);
  };
  run_pool<Outcome>(files.size(), config.threads, work, sink);

  manifest["template"] = template_path.string();
  manifest["mapping"] = entries;
  manifest["timings"] = {{"total_ms", elapsed_ms(start)}, {"per_file_ms", per_file}};
  write_json(out_dir / "manifest.json", manifest);
  return skipped ? kExitPartial : kExitOk;
}

int cmd_train(const RunConfig& config) {
  const auto start = Clock::now();
  auto load_domain = [&](const std::string& dir, const char* label) {
    std::vector<RgbImage> images;
    for (const auto& f : list_files(dir)) {
      RgbImage img;
      try {
        img = read_image(f);
      } catch (const std::exception& e) {
        throw Error(std::string("training aborted, unreadable file in domain ") + label + ": " + f.string() + ": " +
                    e.what());
      }
      if (img.width() != config.model.image_size || img.height() != config.model.image_size) {
        throw Error("training aborted: " + f.string() + " is " + std::to_string(img.width()) + "x" +
                    std::to_string(img.height()) + ", model expects " + std::to_string(config.model.image_size) +
                    " square tiles (see `stainkit tile`)");
      }
      images.push_back(std::move(img));
    }
    if (images.empty()) throw Error(std::string("domain ") + label + " directory has no images: " + dir);
    return images;
  };
  const auto domain_a = load_domain(config.train.domain_a, "A");
  const auto domain_b = load_domain(config.train.domain_b, "B");

  ModelConfig model_config = config.model;
  model_config.seed = config.seed;
  PidrModel model(model_config);

  fs::path checkpoint = config.checkpoint;
  if (checkpoint.empty()) checkpoint = fs::path(config.output_dir) / "model.stpc";
  const fs::path out_dir = config.output_dir.empty() ? checkpoint.parent_path() : fs::path(config.output_dir);
  if (!out_dir.empty()) fs::create_directories(out_dir);
  if (checkpoint.has_parent_path()) fs::create_directories(checkpoint.parent_path());

  TrainOptions options;
  options.steps = config.train.steps;
  options.seed = config.seed + 1;
  options.optimizer.learning_rate = config.train.learning_rate;
  options.optimizer.beta1 = config.train.beta1;
  options.optimizer.beta2 = config.train.beta2;
  options.optimizer.weight_decay = config.train.weight_decay;

  const fs::path curve_path = out_dir / "loss_curve.csv";
  std::ofstream curve(curve_path);
  if (!curve) throw Error("cannot write " + curve_path.string());
  curve << "step,contrastive_color,contrastive_structure,codebook,reconstruction_a,reconstruction_b,total\n"
        << std::setprecision(9);
  log("training " + std::to_string(options.steps) + " steps on " + std::to_string(domain_a.size()) + " + " +
      std::to_string(domain_b.size()) + " tiles");
  train(model, domain_a, domain_b, options, [&](std::size_t step, const LossReport& r) {
    curve << step << ',' << r.contrastive_color << ',' << r.contrastive_structure << ',' << r.codebook << ','
          << r.reconstruction_a << ',' << r.reconstruction_b << ',' << r.total << '\n';
    if ((step + 1) % 50 == 0) {
      std::ostringstream msg;
      msg << "step " << step + 1 << " total " << r.total;
      log(msg.str());
    }
  });
  curve.close();
  save_checkpoint(checkpoint, model);

  json manifest = manifest_header("train", config);
  manifest["checkpoint"] = checkpoint.string();
  manifest["loss_curve"] = curve_path.string();
  manifest["timings"] = {{"total_ms", elapsed_ms(start)}};
  write_json(out_dir / "train_manifest.json", manifest);
  std::cout << checkpoint.string() << '\n';
  return kExitOk;
}

int cmd_evaluate(const RunConfig& config, const fs::path& report_path) {
  if (config.output_dir.empty() || config.reference_dir.empty()) {
    throw Error("evaluate needs both an output directory and a reference directory");
  }
  const auto outputs = list_images(config.output_dir);
  std::map<std::string, fs::path> references;
  for (const auto& r : list_images(config.reference_dir)) references.emplace(r.stem().string(), r);

  std::vector<std::pair<fs::path, fs::path>> pairs;
  for (const auto& o : outputs) {
    const auto it = references.find(o.stem().string());
    if (it == references.end()) {
      log("no reference for " + o.filename().string() + "; skipped");
      continue;
    }
    pairs.emplace_back(o, it->second);
    references.erase(it);
  }
  for (const auto& [stem, r] : references) log("no output for reference " + r.filename().string() + "; skipped");

  struct Scored {
    std::optional<MetricRow> row;
    std::string error;
  };
  const std::function<Scored(std::size_t)> work = [&](std::size_t i) {
    try {
      return Scored{evaluate_pair(pairs[i].first.stem().string(), read_image(pairs[i].first),
                                  read_image(pairs[i].second)),
                    {}};
    } catch (const std::exception& e) {
      return Scored{std::nullopt, e.what()};
    }
  };
  std::vector<std::optional<MetricRow>> rows(pairs.size());
  bool failed = false;
  const std::function<void(std::size_t, Scored&&)> sink = [&](std::size_t i, Scored&& s) {
    if (!s.row) {
      failed = true;
      log("could not score " + pairs[i].first.string() + ": " + s.error);
    }
    rows[i] = std::move(s.row);
  };
  run_pool<Scored>(pairs.size(), config.threads, work, sink);

  MetricReport report;
  for (auto& r : rows)
    if (r) report.rows.push_back(std::move(*r));
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  std::ofstream out(report_path);
  if (!out) throw Error("cannot write " + report_path.string());
  write_metric_csv(out, report);
  std::cout << report_path.string() << '\n';
  return failed ? kExitPartial : kExitOk;
}

}  // namespace stainkit::cli
