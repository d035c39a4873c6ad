#include "efld/cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "efld/container.hpp"
#include "efld/cost.hpp"
#include "efld/image.hpp"
#include "efld/log.hpp"
#include "efld/metrics.hpp"
#include "efld/synth.hpp"
#include "efld/train.hpp"

namespace efld::cli {
namespace {

namespace fs = std::filesystem;

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 1;
  int verbose = 0;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& v, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

// Printed to stderr before any work starts.
void print_resolved(std::ostream& err, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& items, const Globals& g) {
  err << "# resolved configuration: " << command << "\n";
  err << "seed: " << g.seed << "\nthreads: " << g.threads << "\n";
  for (const auto& [k, v] : items) {
    if (v.find('\n') != std::string::npos) {
      err << k << ":\n";
      std::stringstream ss(v);
      std::string line;
      while (std::getline(ss, line)) err << "  " << line << "\n";
    } else {
      err << k << ": " << v << "\n";
    }
  }
  err.flush();
}

std::vector<std::string> dataset_formats(const std::vector<Dataset>& data) {
  std::set<std::string> names;
  for (const auto& d : data) {
    for (const auto& f : d.annotated_formats()) names.insert(f);
  }
  return {names.begin(), names.end()};
}

ModelConfig resolve_model_config(const std::string& source, const std::vector<std::string>& heads, Index input_size,
                                 const std::vector<std::string>& fallback_heads) {
  ModelConfig config;
  const std::vector<std::string>& use = heads.empty() ? fallback_heads : heads;
  if (source == "default" || source == "reduced") {
    if (use.empty()) throw UsageError("no heads: pass --heads or provide annotated data");
    config = source == "default" ? ModelConfig::default_config(use)
                                 : ModelConfig::reduced(input_size > 0 ? input_size : 32, use);
  } else {
    config = parse_model_config(read_config_source(source));
    if (!heads.empty()) config = config.with_heads(heads);
  }
  if (input_size > 0) config.input_size = input_size;
  config.validate();
  return config;
}

TrainConfig resolve_train_config(const std::string& source) {
  if (source == "default" || source == "reduced") return TrainConfig{};
  return parse_train_config(read_config_source(source));
}

/// Either one image file or a directory (a dataset, or loose image files).
std::vector<std::pair<std::string, Tensorf>> read_inputs(const fs::path& input) {
  std::vector<std::pair<std::string, Tensorf>> out;
  if (fs::is_directory(input)) {
    if (fs::exists(input / "annotations.jsonl")) {
      Dataset ds = load_dataset(input);
      for (auto& s : ds.samples) out.emplace_back(s.image_path, std::move(s.image));
      return out;
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(input)) {
      const auto ext = e.path().extension();
      if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.emplace_back(f.filename().string(), read_image(f));
    return out;
  }
  out.emplace_back(input.filename().string(), read_image(input));
  return out;
}

const ModelConfig& config_of(const AnyModel& m) {
  return std::visit([](const auto& x) -> const ModelConfig& { return x.config(); }, m);
}

Tensorf predict_any(const AnyModel& m, const std::vector<const Sample*>& samples, const std::string& format) {
  if (const auto* q = std::get_if<QuantizedModel>(&m)) return quantized_predict(*q, samples, format);
  return predict(std::get<Model<float>>(m), samples, format);
}

Tensord to_double(const Tensorf& t) { return t.cast<double>(); }

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Efficient facial landmark detection toolkit: synthesize data, train, quantize, analyze, export "
               "and run EFLD models.",
               "efld"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed for every seeded step")->each([&](const std::string&) {
    g.seed_given = true;
  });
  app.add_option("--threads", g.threads, "Worker threads (kernels are single-threaded; values above 1 are ignored)")
      ->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", g.verbose, "More diagnostics on stderr (repeatable)");
  app.set_version_flag("--version", std::string("efld ") + toolkit_version + " (container format " +
                                        std::to_string(container_version) + ")");

  // synth
  auto* synth = app.add_subcommand("synth", "Render a synthetic face dataset");
  SynthSpec sspec;
  std::string synth_formats = "p51";
  std::string synth_out;
  synth->add_option("--count", sspec.count, "Number of samples")->required()->check(CLI::NonNegativeNumber);
  synth->add_option("--size", sspec.image_size, "Image side length in pixels")->capture_default_str();
  synth->add_option("--formats", synth_formats, "Comma-separated landmark formats")->capture_default_str();
  synth->add_flag("--round-robin", sspec.round_robin, "Annotate sample i with only the (i mod n)-th format");
  synth->add_option("--noise", sspec.noise, "Pixel noise standard deviation")->capture_default_str();
  synth->add_option("--out", synth_out, "Output dataset directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Cross-format training of a float model");
  std::string train_config = "default", train_data, train_out, train_log, train_heads;
  Index train_epochs = 0, train_batch = 0, train_input = 0;
  train_cmd->add_option("--config", train_config, "Config file, or 'default' / 'reduced'")->capture_default_str();
  train_cmd->add_option("--data", train_data, "Dataset directories, comma-separated")->required();
  train_cmd->add_option("--out", train_out, "Output model container")->required();
  train_cmd->add_option("--log", train_log, "Per-epoch CSV log");
  train_cmd->add_option("--heads", train_heads, "Heads to build (default: formats found in the data)");
  train_cmd->add_option("--epochs", train_epochs, "Override the configured epoch count");
  train_cmd->add_option("--batch-size", train_batch, "Override the configured batch size");
  train_cmd->add_option("--input-size", train_input, "Override the model input size");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a model on an annotated dataset");
  std::string eval_model, eval_data, eval_format = "p51", eval_report, eval_ced;
  double eval_threshold = 0.1, eval_radius = 5.0;
  eval->add_option("--model", eval_model, "Model container (float or int8)")->required();
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--format", eval_format, "Landmark format / head to evaluate")->capture_default_str();
  eval->add_option("--report", eval_report, "Write the report as JSON");
  eval->add_option("--ced", eval_ced, "Write the CED curve as CSV (error,fraction)");
  eval->add_option("--threshold", eval_threshold, "NME threshold for FR and CED-AUC")->capture_default_str();
  eval->add_option("--radius", eval_radius, "Pixel radius for the accuracy metric")->capture_default_str();

  // quantize
  auto* quant = app.add_subcommand("quantize", "Int8 post-training quantization with calibration");
  std::string q_model, q_calib, q_out;
  quant->add_option("--model", q_model, "Float model container")->required();
  quant->add_option("--calib", q_calib, "Calibration dataset directory")->required();
  quant->add_option("--out", q_out, "Output int8 container")->required();

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Static cost analysis: MACs, FLOPs, parameters, sizes");
  std::string a_config = "default", a_variant = "default", a_json, a_heads;
  Index a_input = 0;
  analyze->add_option("--config", a_config, "Config file, or 'default' / 'reduced'")->capture_default_str();
  analyze->add_option("--variant", a_variant, "default | conv-backbone | pfld-head")
      ->check(CLI::IsMember({"default", "conv-backbone", "pfld-head"}))
      ->capture_default_str();
  analyze->add_option("--json", a_json, "Write the cost report as JSON");
  analyze->add_option("--heads", a_heads, "Heads to count (default: p51 for built-in configs, else all)");
  analyze->add_option("--input-size", a_input, "Override the input size");

  // export
  auto* exp = app.add_subcommand("export", "Write a head-pruned copy of a model");
  std::string e_model, e_heads, e_out;
  exp->add_option("--model", e_model, "Model container (float or int8)")->required();
  exp->add_option("--heads", e_heads, "Heads to keep, comma-separated")->required();
  exp->add_option("--out", e_out, "Output container")->required();

  // infer
  auto* infer = app.add_subcommand("infer", "Predict landmarks for pre-cropped face images");
  std::string i_model, i_input, i_format = "p51", i_out;
  infer->add_option("--model", i_model, "Model container (float or int8)")->required();
  infer->add_option("--input", i_input, "Image file, image directory, or dataset directory")->required();
  infer->add_option("--format", i_format, "Head to run")->capture_default_str();
  infer->add_option("--out", i_out, "Write JSON lines here instead of stdout");

  std::vector<std::string> argv_store{"efld"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code != 0 && app.get_subcommands().empty()) err << app.help();
    return code == 0 ? 0 : 1;
  }

  log_level() = g.verbose >= 2 ? LogLevel::debug : g.verbose == 1 ? LogLevel::info : LogLevel::warning;
  if (g.threads > 1) warn("--threads " + std::to_string(g.threads) + " requested; kernels run single-threaded");
  g.threads = 1;
  Eigen::setNbThreads(1);

  try {
    if (synth->parsed()) {
      sspec.seed = g.seed;
      sspec.formats = split_list(synth_formats);
      print_resolved(err, "synth",
                     {{"count", std::to_string(sspec.count)}, {"size", std::to_string(sspec.image_size)},
                      {"formats", join(sspec.formats)}, {"round_robin", sspec.round_robin ? "true" : "false"},
                      {"noise", std::to_string(sspec.noise)}, {"out", synth_out}},
                     g);
      const Dataset ds = generate_synthetic(sspec);
      save_dataset(ds, synth_out);
      out << "wrote " << ds.size() << " samples to " << synth_out << "\n";
    } else if (train_cmd->parsed()) {
      std::vector<Dataset> data;
      for (const auto& dir : split_list(train_data)) data.push_back(load_dataset(dir));
      std::vector<const Dataset*> ptrs;
      for (const auto& d : data) {
        if (d.empty()) throw ValidationError("train: dataset is empty");
        ptrs.push_back(&d);
      }
      const ModelConfig mc = resolve_model_config(train_config, split_list(train_heads), train_input,
                                                  dataset_formats(data));
      TrainConfig tc = resolve_train_config(train_config);
      if (train_epochs > 0) tc.epochs = train_epochs;
      if (train_batch > 0) tc.batch_size = train_batch;
      if (g.seed_given) tc.seed = g.seed;
      tc.validate();
      print_resolved(err, "train",
                     {{"data", train_data}, {"out", train_out}, {"log", train_log}, {"model", to_text(mc)},
                      {"train", to_text(tc)}},
                     g);
      Model<float> model = build_model<float>(mc, tc.seed);
      TrainOptions opts;
      opts.on_epoch = [&](const EpochLog& e) {
        log(LogLevel::info, "epoch " + std::to_string(e.epoch) + " lr " + std::to_string(e.lr) + " loss " +
                                std::to_string(e.loss_total));
        return true;
      };
      const TrainLog log_rows = train(model, ptrs, tc, opts);
      save_model(model, train_out);
      if (!train_log.empty()) write_text_file(train_log, log_rows.csv());
      const EpochLog& last = log_rows.epochs.back();
      out << "trained " << log_rows.epochs.size() << " epochs; final loss " << last.loss_total << "\n";
    } else if (eval->parsed()) {
      print_resolved(err, "eval",
                     {{"model", eval_model}, {"data", eval_data}, {"format", eval_format},
                      {"threshold", std::to_string(eval_threshold)}, {"radius", std::to_string(eval_radius)},
                      {"report", eval_report}, {"ced", eval_ced}},
                     g);
      const AnyModel model = load_model(eval_model);
      const Dataset ds = load_dataset(eval_data);
      if (ds.empty()) throw ValidationError("eval: dataset " + eval_data + " is empty");
      const auto samples = annotated(ds, eval_format);
      if (samples.empty()) throw ValidationError("eval: no samples annotated in format " + eval_format);
      config_of(model).head(eval_format);
      const Tensorf pred = predict_any(model, samples, eval_format);
      const EvalReport r = evaluate(to_double(pred), to_double(ground_truth(samples, eval_format)),
                                    ds.formats.at(eval_format), eval_threshold, double(ds.image_size()), eval_radius);
      char buf[256];
      std::snprintf(buf, sizeof buf,
                    "format %s samples %lld\nNME %.4f\nFR@%.0f%% %.4f\nCED-AUC@%.0f%% %.4f\naccuracy@%.0fpx %.4f\n",
                    r.format.c_str(), static_cast<long long>(r.count), r.nme_mean * 100.0, eval_threshold * 100.0,
                    r.failure_rate, eval_threshold * 100.0, r.auc * 100.0, eval_radius, r.pixel_accuracy);
      out << buf;
      if (!eval_report.empty()) write_text_file(eval_report, r.json() + "\n");
      if (!eval_ced.empty()) write_text_file(eval_ced, ced_csv(r.nme, eval_threshold));
    } else if (quant->parsed()) {
      print_resolved(err, "quantize", {{"model", q_model}, {"calib", q_calib}, {"out", q_out}}, g);
      const AnyModel model = load_model(q_model);
      const auto* fm = std::get_if<Model<float>>(&model);
      if (!fm) throw UsageError("quantize: " + q_model + " is already quantized");
      const Dataset calib = load_dataset(q_calib);
      if (calib.empty()) throw ValidationError("quantize: calibration dataset " + q_calib + " is empty");
      const QuantizedModel q = quantize_model(*fm, calibrate(*fm, calib).params());
      save_model(q, q_out);
      out << "quantized " << q.weight_bytes() << " weights (" << q.sites().size() << " activation sites) to "
          << q_out << "\n";
    } else if (analyze->parsed()) {
      const bool builtin = a_config == "default" || a_config == "reduced";
      std::vector<std::string> heads = split_list(a_heads);
      if (heads.empty() && builtin) heads = {"p51"};
      const ModelConfig base = resolve_model_config(a_config, heads, a_input, {});
      const ModelConfig mc = apply_variant(base, a_variant);
      print_resolved(err, "analyze", {{"variant", a_variant}, {"json", a_json}, {"model", to_text(mc)}}, g);
      const CostReport r = count_cost(mc);
      out << r.text();
      if (!a_json.empty()) write_text_file(a_json, r.json() + "\n");
    } else if (exp->parsed()) {
      const auto heads = split_list(e_heads);
      print_resolved(err, "export", {{"model", e_model}, {"heads", join(heads)}, {"out", e_out}}, g);
      const AnyModel model = load_model(e_model);
      save_model(model, e_out, heads);
      out << "exported heads " << join(heads) << " to " << e_out << "\n";
    } else if (infer->parsed()) {
      print_resolved(err, "infer", {{"model", i_model}, {"input", i_input}, {"format", i_format}, {"out", i_out}}, g);
      const AnyModel model = load_model(i_model);
      const ModelConfig& mc = config_of(model);
      mc.head(i_format);
      const auto inputs = read_inputs(i_input);
      std::string lines;
      for (const auto& [name, image] : inputs) {
        Sample s;
        s.image_path = name;
        s.image = resize_bilinear(image, mc.input_size, mc.input_size);
        const Tensorf pred = predict_any(model, {&s}, i_format);
        const double w = double(image.dim(1)), h = double(image.dim(0));
        nlohmann::ordered_json j;
        j["image"] = name;
        j["format"] = i_format;
        nlohmann::json points = nlohmann::json::array();
        for (Index k = 0; k < pred.size() / 2; ++k) {
          // Clamped to the crop: landmarks of a pre-cropped face lie inside it.
          const double x = std::clamp(double(pred[2 * k]), 0.0, 1.0), y = std::clamp(double(pred[2 * k + 1]), 0.0, 1.0);
          points.push_back({x * w, y * h});
        }
        j["points"] = std::move(points);
        lines += j.dump() + "\n";
      }
      if (i_out.empty()) {
        out << lines;
      } else {
        write_text_file(i_out, lines);
      }
    }
  } catch (const Error& e) {
    err << "efld: error: " << e.what() << "\n";
    switch (e.category()) {
      case Error::Category::usage: return 1;
      case Error::Category::data: return 2;
      case Error::Category::internal: return 3;
    }
  } catch (const std::filesystem::filesystem_error& e) {
    err << "efld: error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "efld: internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace efld::cli
