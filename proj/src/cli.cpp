#include "cardio/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "cardio/json_io.hpp"
#include "cardio/preprocess.hpp"
#include "cardio/training.hpp"
#include "cardio/verify.hpp"

namespace cardio {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (std::size_t v : parse_size_list(text)) out.push_back(v);
  return out;
}

/// `out` itself when it does not exist or is empty; otherwise a fresh
/// timestamped directory inside it. Existing runs are never overwritten.
fs::path prepare_run_dir(const fs::path& out) {
  if (!fs::exists(out)) {
    fs::create_directories(out);
    return out;
  }
  if (!fs::is_directory(out)) throw Error("--out '" + out.string() + "' is not a directory");
  if (fs::is_empty(out)) return out;
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream stamp;
  stamp << "run-" << std::put_time(std::gmtime(&now), "%Y%m%d-%H%M%S");
  fs::path candidate = out / stamp.str();
  for (int n = 2; fs::exists(candidate); ++n) candidate = out / (stamp.str() + "-" + std::to_string(n));
  fs::create_directory(candidate);
  return candidate;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

void require_empty_target(const fs::path& out) {
  if (fs::exists(out) && !(fs::is_directory(out) && fs::is_empty(out))) {
    throw Error("--out '" + out.string() + "' exists and is not an empty directory");
  }
}

std::string report_text(const std::vector<MetricSummary>& summary) {
  return "metric\tmean\tstd\tmean±std\n" + format_report(summary);
}

/// Reads `key = value` lines ('#' starts a comment) into the options of
/// `sub` named --key. Options already given on the command line keep their
/// values; unknown keys are an error.
void apply_config_file(CLI::App& sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config file " + path);
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    line = line.substr(0, line.find('#'));
    const auto trim = [](std::string t) {
      const auto b = t.find_first_not_of(" \t\r");
      const auto e = t.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : t.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(path + ":" + std::to_string(number) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    CLI::Option* opt = nullptr;
    try {
      opt = sub.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
    }
    if (opt == nullptr || key == "config") {
      throw Error(path + ":" + std::to_string(number) + ": unknown key '" + key + "' for " + sub.get_name());
    }
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

// ---------------------------------------------------------------------------

struct DatagenFlags {
  SyntheticSpec spec;
  std::string out;
};

void cmd_datagen(const DatagenFlags& f, std::ostream& out) {
  require_empty_target(f.out);
  const Dataset data = generate_synthetic(f.spec);
  write_dataset(f.out, data);
  out << "wrote " << data.samples.size() << " samples (" << f.spec.classes << " classes, "
      << f.spec.subjects << " subjects) to " << f.out << "\n";
}

struct PreprocessFlags {
  std::string data, out, mode;
  std::size_t window = 250, pad_to = 300;
  double rate = 250.0;
};

void cmd_preprocess(const PreprocessFlags& f, std::ostream& out, std::ostream& err) {
  require_empty_target(f.out);
  PipelineOptions opt;
  opt.mode = f.mode == "heartbeat" ? SegmentationMode::heartbeat : SegmentationMode::window;
  opt.window_len = f.window;
  opt.pad_to = f.pad_to;
  opt.target_rate_hz = f.rate;
  PipelineReport report;
  const Dataset processed = preprocess_dataset(read_dataset(f.data), opt, &report);
  for (const auto& w : report.warnings) err << "warning: " << w << "\n";
  if (processed.samples.empty()) throw Error("preprocess: no samples produced");
  write_dataset(f.out, processed);
  out << "processed " << report.recordings << " recordings into " << report.samples << " samples";
  if (opt.mode == SegmentationMode::heartbeat) out << " (" << report.discarded_beats << " beats discarded)";
  out << "; wrote " << f.out << "\n";
}

struct TrainFlags {
  std::string data, out = "runs", seeds = "41,42,43", patches, augment;
  std::string head_pooling = "mean", patch_encoder = "residual";
  std::size_t batch = 0, epochs = 10, patience = 3, d_model = 128, layers = 6, heads = 8, ff = 256;
  std::size_t positional_rows = 0, eval_batch = 64;
  double lr = 1e-4, dropout = 0.1, attention_dropout = 0.0;
  bool include_routers = false;
  std::uint64_t split_seed = 0;
};

void cmd_train(const TrainFlags& f, const std::string& command_line, std::ostream& out) {
  const Dataset data = read_dataset(f.data);
  const auto& m = data.manifest;

  ModelConfig mc;
  mc.timestamps = m.timestamps;
  mc.channels = m.channels;
  mc.classes = m.classes;
  if (!f.patches.empty()) mc.patch_lengths = parse_size_list(f.patches);
  mc.d_model = f.d_model;
  mc.layers = f.layers;
  mc.heads = f.heads;
  mc.ff_width = f.ff;
  mc.positional_rows = f.positional_rows;
  mc.augmentations = f.augment.empty() ? default_augmentation_pool(m.classes, m.channels, m.timestamps)
                                       : parse_augmentation_pool(f.augment);
  mc.head_pooling = parse_head_pooling(f.head_pooling);
  mc.head_includes_routers = f.include_routers;
  mc.patch_encoder = parse_patch_encoder(f.patch_encoder);
  mc.dropout = f.dropout;
  mc.attention_dropout = f.attention_dropout;
  mc.validate();

  TrainConfig tc;
  tc.learning_rate = f.lr;
  tc.batch_size = f.batch != 0 ? f.batch : default_batch_size(m.classes, m.channels, m.timestamps);
  tc.max_epochs = f.epochs;
  tc.patience = f.patience;
  tc.seeds = parse_seeds(f.seeds);
  tc.split_seed = f.split_seed;
  tc.eval_batch_size = f.eval_batch;
  tc.validate();

  const fs::path run = prepare_run_dir(f.out);
  json split_json = json::object();
  std::vector<std::string> subjects;
  for (const auto& s : data.samples) subjects.push_back(s.subject);
  for (const auto& [subject, part] : subject_split(subjects, tc.split_seed).subjects) {
    split_json[subject] = std::string(to_string(part));
  }
  const json meta = {{"version", kVersion},
                     {"command", command_line},
                     {"data", fs::absolute(f.data).lexically_normal().string()},
                     {"dataset_name", m.name},
                     {"model_config", to_json(mc)},
                     {"train_config",
                      {{"learning_rate", tc.learning_rate},
                       {"batch_size", tc.batch_size},
                       {"max_epochs", tc.max_epochs},
                       {"patience", tc.patience},
                       {"beta1", tc.beta1},
                       {"beta2", tc.beta2},
                       {"epsilon", tc.epsilon},
                       {"eval_batch_size", tc.eval_batch_size}}},
                     {"seeds", tc.seeds},
                     {"split_seed", tc.split_seed},
                     {"split", split_json}};
  write_text(run / "run.json", meta.dump(2) + "\n");
  out << "run directory " << run.string() << "\n";

  const auto report = multi_seed_run(mc, data, tc, [&](const SeedRun& r) {
    const fs::path dir = run / ("seed-" + std::to_string(r.seed));
    fs::create_directory(dir);
    std::string history;
    for (const auto& e : r.result.history) {
      history += json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_f1", e.val_f1}}.dump() + "\n";
      out << "seed " << r.seed << " epoch " << e.epoch << " train_loss " << e.train_loss << " val_f1 "
          << e.val_f1 << "\n";
    }
    write_text(dir / "history.jsonl", history);
    save_checkpoint(dir / "checkpoint.ckpt", r.result.best);
    write_text(dir / "metrics.txt", report_text(aggregate({r.test})));
    out << "seed " << r.seed << " best epoch " << r.result.best.state.epoch << " test accuracy "
        << r.test.accuracy << "\n";
  });
  const std::string text = report_text(report.summary);
  write_text(run / "report.txt", text);
  out << text;
}

struct EvalFlags {
  std::string data, run, split = "test", report;
  std::vector<std::string> checkpoints;
  std::uint64_t split_seed = 0;
  std::size_t batch = 64;
};

void cmd_eval(EvalFlags f, bool split_seed_given, std::ostream& out) {
  std::vector<fs::path> checkpoints(f.checkpoints.begin(), f.checkpoints.end());
  if (!f.run.empty()) {
    const fs::path run = f.run;
    std::ifstream meta_file(run / "run.json");
    if (!meta_file) throw Error("--run '" + f.run + "' has no run.json");
    const json meta = json::parse(meta_file);
    if (!split_seed_given) f.split_seed = meta.at("split_seed").get<std::uint64_t>();
    for (const auto& seed : meta.at("seeds")) {
      checkpoints.push_back(run / ("seed-" + std::to_string(seed.get<std::uint64_t>())) / "checkpoint.ckpt");
    }
  }
  if (checkpoints.empty()) throw Error("eval: give --checkpoint or --run");

  const Dataset data = read_dataset(f.data);
  std::vector<Sample> samples;
  if (f.split == "all") {
    samples = data.samples;
  } else {
    std::vector<std::string> subjects;
    for (const auto& s : data.samples) subjects.push_back(s.subject);
    const auto split = subject_split(subjects, f.split_seed);
    samples = select_samples(data.samples, split.sample_indices(data.samples, parse_partition(f.split)));
  }

  std::vector<MetricSet> per_checkpoint;
  for (const auto& path : checkpoints) {
    Checkpoint ckpt = load_checkpoint(path);
    check_compatible(ckpt.config, data.manifest);
    const Cardioformer<float> model(ckpt.config);
    per_checkpoint.push_back(evaluate_records(predict_records(model, ckpt.parameters, samples, f.batch)));
  }
  const std::string text = report_text(aggregate(per_checkpoint));
  if (!f.report.empty()) write_text(f.report, text);
  out << text;
}

int cmd_verify(const std::vector<std::string>& suites, double scale, std::ostream& out) {
  VerifyOptions options;
  options.attention_scale_multiplier = scale;
  const auto& names = suites.empty() ? suite_names() : suites;
  int failures = 0;
  for (const auto& name : names) {
    const SuiteResult r = run_suite(name, options);
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    failures += !r.passed;
  }
  out << (failures == 0 ? "all suites passed" : std::to_string(failures) + " suite(s) failed") << "\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-granularity transformer for multichannel ECG classification", "cardioformer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::map<CLI::App*, std::string> config_paths;
  auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_paths[sub], "key=value configuration file (flags take precedence)");
  };

  DatagenFlags dg;
  auto* datagen = app.add_subcommand("datagen", "Generate a synthetic pulse-train dataset");
  with_config(datagen);
  datagen->add_option("--classes", dg.spec.classes, "Number of classes")->capture_default_str();
  datagen->add_option("--subjects", dg.spec.subjects, "Number of subjects")->capture_default_str();
  datagen->add_option("--per-subject", dg.spec.samples_per_subject, "Samples per subject")->capture_default_str();
  datagen->add_option("--timestamps", dg.spec.timestamps, "Window length T")->capture_default_str();
  datagen->add_option("--channels", dg.spec.channels, "Channels C")->capture_default_str();
  datagen->add_option("--seed", dg.spec.seed, "Generator seed")->capture_default_str();
  datagen->add_option("--noise", dg.spec.noise_stddev, "Noise standard deviation")->capture_default_str();
  datagen->add_option("--rate", dg.spec.sampling_rate_hz, "Sampling rate (Hz)")->capture_default_str();
  datagen->add_option("--name", dg.spec.name, "Dataset name")->capture_default_str();
  datagen->add_option("--out", dg.out, "Output directory (must not exist or be empty)")->required();

  PreprocessFlags pp;
  auto* preprocess = app.add_subcommand("preprocess", "Resample, standardize and segment raw recordings");
  with_config(preprocess);
  preprocess->add_option("--data", pp.data, "Raw recording dataset")->required();
  preprocess->add_option("--out", pp.out, "Output dataset directory")->required();
  preprocess->add_option("--mode", pp.mode, "Segmentation mode")
      ->required()
      ->check(CLI::IsMember({"heartbeat", "window"}));
  preprocess->add_option("--window", pp.window, "Fixed window length")->capture_default_str();
  preprocess->add_option("--pad-to", pp.pad_to, "Heartbeat window length")->capture_default_str();
  preprocess->add_option("--rate", pp.rate, "Target sampling rate (Hz)")->capture_default_str();

  TrainFlags tr;
  auto* train = app.add_subcommand("train", "Train one model per seed and report test metrics");
  with_config(train);
  train->add_option("--data", tr.data, "Dataset directory")->required();
  train->add_option("--out", tr.out, "Run directory")->capture_default_str();
  train->add_option("--seeds,--seed", tr.seeds, "Comma-separated training seeds")->capture_default_str();
  train->add_option("--split-seed", tr.split_seed, "Subject split seed")->capture_default_str();
  train->add_option("--batch", tr.batch, "Batch size (default from dataset shape)");
  train->add_option("--lr", tr.lr, "Learning rate")->capture_default_str();
  train->add_option("--epochs", tr.epochs, "Maximum epochs")->capture_default_str();
  train->add_option("--patience", tr.patience, "Early stopping patience")->capture_default_str();
  train->add_option("--patches", tr.patches, "Comma-separated patch lengths");
  train->add_option("--d-model", tr.d_model, "Model width D")->capture_default_str();
  train->add_option("--layers", tr.layers, "Encoder layers M")->capture_default_str();
  train->add_option("--heads", tr.heads, "Attention heads H")->capture_default_str();
  train->add_option("--ff", tr.ff, "Feed-forward width")->capture_default_str();
  train->add_option("--positional-rows", tr.positional_rows, "Rows of the positional table (0: automatic)");
  train->add_option("--augment", tr.augment, "Augmentation pool, e.g. \"{jitter0.2,scale0.2,drop0.5}\"");
  train->add_option("--head-pooling", tr.head_pooling, "Classifier input: mean or flatten")->capture_default_str();
  train->add_flag("--include-routers", tr.include_routers, "Feed routers to the classifier");
  train->add_option("--patch-encoder", tr.patch_encoder, "residual or linear")->capture_default_str();
  train->add_option("--dropout", tr.dropout, "Dropout rate")->capture_default_str();
  train->add_option("--attention-dropout", tr.attention_dropout, "Attention dropout rate")->capture_default_str();
  train->add_option("--eval-batch", tr.eval_batch, "Evaluation batch size")->capture_default_str();

  EvalFlags ev;
  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on a dataset split");
  with_config(eval);
  eval->add_option("--data", ev.data, "Dataset directory")->required();
  eval->add_option("--checkpoint", ev.checkpoints, "Checkpoint file (repeatable)");
  eval->add_option("--run", ev.run, "Run directory produced by train");
  auto* split_seed_opt = eval->add_option("--split-seed", ev.split_seed, "Subject split seed");
  eval->add_option("--split", ev.split, "train, validation, test or all")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "validation", "test", "all"}));
  eval->add_option("--report", ev.report, "Also write the report to this file");
  eval->add_option("--batch", ev.batch, "Evaluation batch size")->capture_default_str();

  std::vector<std::string> suites;
  double mutate_scale = 1.0;
  auto* verify = app.add_subcommand("verify", "Run the verification suites");
  verify->add_option("--suite", suites, "Suite to run (repeatable)")->check(CLI::IsMember(suite_names()));
  verify->add_option("--mutate-attention-scale", mutate_scale,
                     "Multiply the attention score scale (testing the tester)");

  try {
    app.parse(argc, argv);
    for (auto& [sub, path] : config_paths) {
      if (*sub && !path.empty()) apply_config_file(*sub, path);
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  std::string command_line;
  for (int i = 0; i < argc; ++i) command_line += (i ? " " : "") + std::string(argv[i]);

  try {
    if (*datagen) cmd_datagen(dg, out);
    if (*preprocess) cmd_preprocess(pp, out, err);
    if (*train) cmd_train(tr, command_line, out);
    if (*eval) cmd_eval(ev, split_seed_opt->count() > 0, out);
    if (*verify) return cmd_verify(suites, mutate_scale, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace cardio
