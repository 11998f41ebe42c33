#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dla/adapt.hpp"
#include "dla/config.hpp"
#include "dla/eval.hpp"
#include "dla/labelspace.hpp"
#include "dla/plot.hpp"
#include "dla/synthdocs.hpp"

#ifndef DLA_VERSION
#define DLA_VERSION "unknown"
#endif
#ifndef DLA_GIT_REV
#define DLA_GIT_REV "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dla;

namespace {

constexpr const char* kRunRootEnv = "DLADAPTER_RUN_ROOT";

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kConfiguration = 3,
  kIngestion = 4,
  kNumeric = 5,
  kIo = 6,
  kContract = 7,
  kEvaluation = 8,
};

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Configuration: return kConfiguration;
    case ErrorKind::Ingestion: return kIngestion;
    case ErrorKind::Numeric: return kNumeric;
    case ErrorKind::IO: return kIo;
    case ErrorKind::Contract: return kContract;
    case ErrorKind::Evaluation: return kEvaluation;
  }
  return kInternal;
}

const char* kExitCodeHelp =
    "Exit codes: 0 success, 1 internal error, 2 usage error, 3 configuration, 4 ingestion,\n"
    "5 numeric, 6 I/O, 7 contract violation, 8 evaluation.\n";

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_atomic(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t hash_file(const fs::path& p) {
  const auto text = read_text(p);
  return fnv1a(text.data(), text.size());
}

void progress(const std::string& msg) { std::cerr << msg << "\n"; }

// Every subcommand keeps its flags as strings so the manifest can record
// and replay them verbatim.
using Args = std::map<std::string, std::string>;

struct Run {
  std::string command;
  Args args;
  std::vector<std::string> overrides;
  std::string config_path;
  std::string manifest_path;
  std::string out;
};

fs::path resolve_out_dir(const Run& run) {
  if (!run.out.empty()) return run.out;
  const char* root = std::getenv(kRunRootEnv);
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", std::localtime(&now));
  return fs::path(root && *root ? root : "runs") / (run.command + "-" + stamp);
}

class Manifest {
 public:
  Manifest(std::string command, fs::path dir) : command_(std::move(command)), dir_(std::move(dir)) {
    fs::create_directories(dir_);
  }

  const fs::path& dir() const { return dir_; }
  void output(const std::string& name) { outputs_.push_back(name); }

  void write(const Args& args, const std::string& config, std::uint64_t seed) const {
    json j;
    j["command"] = command_;
    j["version"] = DLA_VERSION;
    j["git_revision"] = DLA_GIT_REV;
    j["arguments"] = args;
    j["config"] = config;
    j["seed"] = seed;
    json outs = json::object();
    for (const auto& name : outputs_) outs[name] = hex64(hash_file(dir_ / name));
    j["outputs"] = outs;
    j["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_atomic(dir_ / "manifest.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  fs::path dir_;
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Loads a manifest into `run`, replacing its arguments and configuration.
// Returns the recorded resolved config text.
std::string load_manifest(Run& run) {
  json j;
  try {
    j = json::parse(read_text(run.manifest_path));
  } catch (const json::exception& e) {
    throw IngestionError("malformed manifest " + run.manifest_path + ": " + e.what());
  }
  try {
    if (j.at("command").get<std::string>() != run.command)
      throw ConfigError("manifest was written by '" + j.at("command").get<std::string>() + "', not '" +
                        run.command + "'");
    run.args = j.at("arguments").get<Args>();
    return j.at("config").get<std::string>();
  } catch (const json::exception& e) {
    throw IngestionError("malformed manifest " + run.manifest_path + ": " + e.what());
  }
}

template <class Config>
Config resolve_config(Run& run, std::string& config_text) {
  Config cfg;
  if (!run.manifest_path.empty()) {
    if (!run.overrides.empty() || !run.config_path.empty())
      throw ConfigError("--from-manifest cannot be combined with --config or --set");
    apply_ini(cfg, load_manifest(run));
  } else {
    if (!run.config_path.empty()) apply_ini(cfg, read_text(run.config_path));
    for (const auto& o : run.overrides) apply_override(cfg, o);
  }
  cfg.validate();
  config_text = to_ini(cfg);
  return cfg;
}

void resolve_plain(Run& run) {
  if (!run.manifest_path.empty()) load_manifest(run);
}

std::string arg(const Args& a, const std::string& key) {
  const auto it = a.find(key);
  return it == a.end() ? std::string() : it->second;
}

void require_args(const Run& run, std::initializer_list<const char*> keys) {
  for (const char* k : keys)
    if (arg(run.args, k).empty()) throw ConfigError(run.command + ": missing --" + k);
}

// Recorded paths are made absolute so a manifest replays from any directory.
void absolutize(Run& run, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    auto& v = run.args[k];
    if (!v.empty() && fs::exists(v)) v = fs::absolute(v).lexically_normal().string();
  }
}

// --mapping accepts a builtin mapping name or a mapping file. A file maps
// onto the sorted set of its non-DROP targets.
Dataset apply_mapping(const Dataset& ds, const std::string& mapping) {
  if (mapping.empty()) return ds;
  const auto names = builtin_mapping_names();
  if (std::find(names.begin(), names.end(), mapping) != names.end()) return remap(ds, builtin_mapping(mapping));
  const auto text = read_text(mapping);
  std::vector<std::string> targets;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    line = line.substr(0, line.find('#'));
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string t = line.substr(eq + 1);
    t.erase(0, t.find_first_not_of(" \t\r"));
    t.erase(t.find_last_not_of(" \t\r") + 1);
    if (!t.empty() && t != "DROP" && std::find(targets.begin(), targets.end(), t) == targets.end())
      targets.push_back(t);
  }
  std::sort(targets.begin(), targets.end());
  const Taxonomy target{fs::path(mapping).stem().string(), targets};
  return remap(ds, parse_mapping(text, ds.taxonomy, target));
}

Dataset load_dataset(const std::string& path, const std::string& mapping) {
  if (path.empty()) throw ConfigError("missing dataset path");
  return apply_mapping(load_coco(path), mapping);
}

UnlabeledImages load_target_images(const std::string& path) {
  // A synth-gen output directory keeps its pages under images/.
  if (fs::is_directory(fs::path(path) / "images")) return UnlabeledImages::scan_directory(fs::path(path) / "images");
  if (fs::is_directory(path)) return UnlabeledImages::scan_directory(path);
  return UnlabeledImages::from(load_coco(path));
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::istringstream in(text);
  for (std::string tok; std::getline(in, tok, ',');) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("--seeds expects comma-separated integers, got '" + text + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds must list at least one seed");
  return seeds;
}

std::string eval_json(const EvalResult& r, const Taxonomy& tax) {
  json j;
  j["map50"] = r.map50;
  json ap = json::object(), gt = json::object();
  for (const auto& [c, v] : r.ap) ap[tax.categories.at(c)] = v;
  for (const auto& [c, n] : r.gt_counts) gt[tax.categories.at(c)] = n;
  j["ap"] = ap;
  j["gt_counts"] = gt;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_synth_gen(Run& run) {
  resolve_plain(run);
  const auto spec = synth::preset(arg(run.args, "preset"));
  int n = 0;
  std::uint64_t seed = 0;
  try {
    n = std::stoi(arg(run.args, "n"));
    seed = std::stoull(arg(run.args, "seed"));
  } catch (const std::exception&) {
    throw ConfigError("--n and --seed must be integers");
  }
  if (n < 1) throw ConfigError("--n must be >= 1");
  Manifest m(run.command, resolve_out_dir(run));
  const auto ds = synth::generate_dataset(spec, n, seed, m.dir());
  m.output("annotations.json");
  for (const auto& rec : ds.images) m.output(rec.file_name);
  m.write(run.args, "", seed);
  progress("wrote " + std::to_string(n) + " pages to " + m.dir().string());
  return kOk;
}

void write_report(Manifest& m, RunReport report) {
  report.checkpoint_path = "checkpoint.bin";
  write_atomic(m.dir() / "metrics.json", report.to_json());
  write_atomic(m.dir() / "metrics.csv", report.to_csv());
  m.output("metrics.json");
  m.output("metrics.csv");
}

int cmd_train_source(Run& run) {
  std::string config_text;
  const auto cfg = resolve_config<SourceTrainConfig>(run, config_text);
  require_args(run, {"train"});
  absolutize(run, {"train", "val", "mapping"});
  const auto train_ds = load_dataset(arg(run.args, "train"), arg(run.args, "mapping"));
  const auto train = load_labeled(train_ds);
  std::vector<LabeledSample> val;
  if (!arg(run.args, "val").empty()) {
    const auto val_ds = load_dataset(arg(run.args, "val"), arg(run.args, "mapping"));
    if (!(val_ds.taxonomy.categories == train_ds.taxonomy.categories))
      throw ConfigError("validation categories differ from training categories");
    val = load_labeled(val_ds);
  }
  Manifest m(run.command, resolve_out_dir(run));
  write_atomic(m.dir() / "config.ini", config_text);
  const auto result = train_source(train, train_ds.taxonomy, cfg, val.empty() ? nullptr : &val, progress);
  save_checkpoint(result.checkpoint, m.dir() / "checkpoint.bin");
  m.output("checkpoint.bin");
  write_report(m, result.report);
  m.write(run.args, config_text, cfg.seed);
  return kOk;
}

int cmd_adapt(Run& run) {
  std::string config_text;
  const auto cfg = resolve_config<AdaptConfig>(run, config_text);
  require_args(run, {"source-ckpt", "target"});
  absolutize(run, {"source-ckpt", "target", "eval", "mapping"});
  const auto source = load_checkpoint(arg(run.args, "source-ckpt"));
  const auto target = load_unlabeled(load_target_images(arg(run.args, "target")));
  std::vector<LabeledSample> eval;
  if (!arg(run.args, "eval").empty()) {
    const auto ds = load_dataset(arg(run.args, "eval"), arg(run.args, "mapping"));
    if (!(ds.taxonomy.categories == source.taxonomy.categories))
      throw ConfigError("evaluation categories differ from the checkpoint's");
    eval = load_labeled(ds);
  }
  Manifest m(run.command, resolve_out_dir(run));
  write_atomic(m.dir() / "config.ini", config_text);
  const auto result = adapt(source, target, source.taxonomy, cfg, eval.empty() ? nullptr : &eval, progress);
  save_checkpoint(result.checkpoint, m.dir() / "checkpoint.bin");
  m.output("checkpoint.bin");
  write_report(m, result.report);
  m.write(run.args, config_text, cfg.seed);
  return kOk;
}

int cmd_eval(Run& run) {
  resolve_plain(run);
  require_args(run, {"ckpt", "data"});
  absolutize(run, {"ckpt", "data", "mapping"});
  const auto ckpt = load_checkpoint(arg(run.args, "ckpt"));
  const auto ds = load_dataset(arg(run.args, "data"), arg(run.args, "mapping"));
  if (!(ds.taxonomy.categories == ckpt.taxonomy.categories))
    throw ConfigError("dataset categories differ from the checkpoint's");
  const Detector det(DetectorConfig::from_json(ckpt.detector_config));
  const auto r = evaluate(det, ckpt.params, load_labeled(ds), ckpt.taxonomy);
  Manifest m(run.command, resolve_out_dir(run));
  const auto table = format_eval_table(r, ckpt.taxonomy, fs::path(arg(run.args, "ckpt")).stem().string());
  write_atomic(m.dir() / "eval.json", eval_json(r, ckpt.taxonomy));
  write_atomic(m.dir() / "eval.txt", table);
  m.output("eval.json");
  m.output("eval.txt");
  m.write(run.args, "", 0);
  std::cout << table;
  return kOk;
}

int cmd_ablate(Run& run) {
  std::string config_text;
  const auto cfg = resolve_config<AdaptConfig>(run, config_text);
  require_args(run, {"source-ckpt", "target", "eval"});
  absolutize(run, {"source-ckpt", "target", "eval", "mapping"});
  const auto seeds = parse_seeds(arg(run.args, "seeds"));
  const auto source = load_checkpoint(arg(run.args, "source-ckpt"));
  const auto target = load_unlabeled(load_target_images(arg(run.args, "target")));
  const auto ds = load_dataset(arg(run.args, "eval"), arg(run.args, "mapping"));
  if (!(ds.taxonomy.categories == source.taxonomy.categories))
    throw ConfigError("evaluation categories differ from the checkpoint's");
  const auto eval = load_labeled(ds);
  Manifest m(run.command, resolve_out_dir(run));
  write_atomic(m.dir() / "config.ini", config_text);
  const auto results =
      ablate(source, target, eval, source.taxonomy, cfg, standard_ablation_grid(), seeds, progress, progress);
  write_atomic(m.dir() / "ablation.csv", ablation_csv(results));
  write_atomic(m.dir() / "ablation.txt", format_ablation_table(results));
  m.output("ablation.csv");
  m.output("ablation.txt");
  for (const auto& r : results)
    for (std::size_t i = 0; i < r.reports.size(); ++i) {
      const auto name = "metrics-" + r.row.name + "-seed" + std::to_string(seeds[i]) + ".json";
      write_atomic(m.dir() / name, r.reports[i].to_json());
      m.output(name);
    }
  m.write(run.args, config_text, seeds.front());
  std::cout << format_ablation_table(results);
  return kOk;
}

// --- report ----------------------------------------------------------------

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string tok; std::getline(in, tok, ',');) out.push_back(tok);
  return out;
}

std::vector<AblationResult> read_ablation_csv(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::string line;
  std::getline(in, line);
  std::vector<AblationResult> out;
  for (; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() < 7) throw IngestionError("malformed ablation row in " + p.string() + ": " + line);
    AblationResult r;
    r.row.name = f[0];
    r.row.source_only = f[1] == "1";
    r.row.switches.selection_mode = f[2] == "1" ? SelectionMode::Hard : SelectionMode::Consensus;
    r.row.switches.use_kl = f[4] == "1";
    r.row.switches.use_auxiliary = f[5] == "1";
    try {
      r.map50 = std::stod(f[6]);
    } catch (const std::exception&) {
      throw IngestionError("malformed mAP in " + p.string() + ": " + line);
    }
    out.push_back(r);
  }
  return out;
}

std::string percent(std::optional<double> v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
  return buf;
}

int cmd_report(Run& run) {
  resolve_plain(run);
  require_args(run, {"runs"});
  absolutize(run, {"runs"});
  const fs::path runs = arg(run.args, "runs");
  if (!fs::is_directory(runs)) throw IoError("not a directory: " + runs.string());
  Run out_run = run;
  if (out_run.out.empty()) out_run.out = (runs / "report").string();
  Manifest m(run.command, resolve_out_dir(out_run));
  fs::create_directories(m.dir() / "plots");

  std::vector<fs::path> metrics, ablations;
  for (const auto& entry : fs::recursive_directory_iterator(runs)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().parent_path() == m.dir()) continue;
    if (entry.path().filename() == "metrics.json") metrics.push_back(entry.path());
    if (entry.path().filename() == "ablation.csv") ablations.push_back(entry.path());
  }
  std::sort(metrics.begin(), metrics.end());
  std::sort(ablations.begin(), ablations.end());
  if (metrics.empty() && ablations.empty()) throw IngestionError("no metrics.json or ablation.csv under " + runs.string());

  std::string text, csv = "run,kind,model";
  std::vector<std::string> categories;
  for (const auto& p : metrics)
    for (const auto& c : RunReport::from_json(read_text(p)).categories)
      if (std::find(categories.begin(), categories.end(), c) == categories.end()) categories.push_back(c);
  for (const auto& c : categories) csv += "," + c;
  csv += ",map50\n";

  if (!metrics.empty()) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-32s %-12s", "run", "model");
    text += buf;
    for (const auto& c : categories) {
      std::snprintf(buf, sizeof buf, " %9s", c.substr(0, 9).c_str());
      text += buf;
    }
    text += "     mAP50\n";
    std::string legend;
    for (const auto& p : metrics) {
      const auto rep = RunReport::from_json(read_text(p));
      const auto name = fs::relative(p.parent_path(), runs).string();
      auto row = [&](const std::string& model, const std::map<std::string, double>& ap, std::optional<double> map) {
        std::snprintf(buf, sizeof buf, "%-32s %-12s", name.c_str(), model.c_str());
        text += buf;
        csv += name + "," + rep.kind + "," + model;
        for (const auto& c : categories) {
          const auto it = ap.find(c);
          const std::optional<double> v = it == ap.end() ? std::nullopt : std::optional<double>(it->second);
          std::snprintf(buf, sizeof buf, " %9s", percent(v).c_str());
          text += buf;
          csv += "," + (v ? format_double(*v) : std::string());
        }
        std::snprintf(buf, sizeof buf, " %9s\n", percent(map).c_str());
        text += buf;
        csv += "," + (map ? format_double(*map) : std::string()) + "\n";
      };
      if (rep.kind == "adapt" && rep.initial_map50) row("source-only", rep.initial_ap, rep.initial_map50);
      std::map<std::string, double> last_ap;
      std::optional<double> last_map;
      for (const auto& e : rep.epochs)
        if (e.map50) {
          last_ap = e.ap;
          last_map = e.map50;
        }
      row(rep.kind == "adapt" ? "adapted" : "trained", last_ap, last_map);

      // Plots: mAP per epoch and loss terms per epoch.
      std::string stem = name;
      std::replace(stem.begin(), stem.end(), '/', '_');
      std::vector<Series> map_series(3);
      map_series[0].name = "student";
      map_series[1].name = "dynamic teacher";
      map_series[2].name = "static teacher";
      if (rep.initial_map50)
        for (auto& s : map_series) {
          s.x.push_back(0);
          s.y.push_back(*rep.initial_map50);
        }
      std::map<std::string, Series> loss_series;
      for (const auto& e : rep.epochs) {
        auto add = [&](Series& s, std::optional<double> v) {
          if (!v) return;
          s.x.push_back(e.epoch);
          s.y.push_back(*v);
        };
        add(map_series[0], e.map50);
        add(map_series[1], e.dynamic_map50);
        add(map_series[2], e.static_map50);
        for (const auto& [term, v] : e.losses) {
          auto& s = loss_series[term];
          s.name = term;
          s.x.push_back(e.epoch);
          s.y.push_back(v);
        }
      }
      std::erase_if(map_series, [](const Series& s) { return s.x.size() < 2; });
      std::vector<Series> losses;
      for (auto& [term, s] : loss_series) losses.push_back(s);
      legend += name + ":\n";
      if (!map_series.empty()) {
        const auto file = "plots/" + stem + "_map.png";
        write_png(line_plot(map_series), m.dir() / file);
        m.output(file);
        legend += "  " + file + "\n";
        for (std::size_t i = 0; i < map_series.size(); ++i) {
          const auto c = series_color(i);
          std::snprintf(buf, sizeof buf, "    rgb(%d,%d,%d) %s\n", int(255 * c[0]), int(255 * c[1]), int(255 * c[2]),
                        map_series[i].name.c_str());
          legend += buf;
        }
      }
      if (!losses.empty()) {
        const auto file = "plots/" + stem + "_loss.png";
        write_png(line_plot(losses), m.dir() / file);
        m.output(file);
        legend += "  " + file + "\n";
        for (std::size_t i = 0; i < losses.size(); ++i) {
          const auto c = series_color(i);
          std::snprintf(buf, sizeof buf, "    rgb(%d,%d,%d) %s\n", int(255 * c[0]), int(255 * c[1]), int(255 * c[2]),
                        losses[i].name.c_str());
          legend += buf;
        }
      }
    }
    text += "\nPlots (x: epoch, y: value):\n" + legend;
  }

  std::string ablation_text, ablation_out;
  for (const auto& p : ablations) {
    const auto results = read_ablation_csv(p);
    ablation_text += "\nAblation: " + fs::relative(p.parent_path(), runs).string() + "\n" + format_ablation_table(results);
    ablation_out += read_text(p);
  }
  text += ablation_text;

  write_atomic(m.dir() / "report.txt", text);
  write_atomic(m.dir() / "report.csv", csv);
  m.output("report.txt");
  m.output("report.csv");
  if (!ablations.empty()) {
    write_atomic(m.dir() / "ablation.csv", ablation_out);
    m.output("ablation.csv");
  }
  m.write(run.args, "", 0);
  std::cout << text;
  return kOk;
}

// ---------------------------------------------------------------------------

struct Subcommand {
  CLI::App* app;
  int (*fn)(Run&);
  Run run;
};

void add_common(CLI::App* app, Run& run) {
  app->add_option("--out", run.out,
                  std::string("Run directory (default: $") + kRunRootEnv + "/<command>-<timestamp>, root 'runs')");
  app->add_option("--from-manifest", run.manifest_path,
                  "Re-execute with the arguments and resolved config recorded in a manifest.json")
      ->check(CLI::ExistingFile);
}

void add_config(CLI::App* app, Run& run, const std::string& keys) {
  app->add_option("--config", run.config_path, "INI config file ([section] key = value)")->check(CLI::ExistingFile);
  app->add_option("--set", run.overrides, "Override one config key: section.key=value (repeatable)")
      ->allow_extra_args(false);
  app->footer("Config keys (section.key  default  description):\n" + keys + "\n" + kExitCodeHelp);
}

void add_arg(CLI::App* app, Run& run, const std::string& name, const std::string& help,
             const std::string& default_value = "", bool required = false) {
  auto& slot = run.args[name];
  slot = default_value;
  auto* opt = app->add_option("--" + name, slot, help);
  if (!default_value.empty()) opt->default_str(default_value);
  if (required) opt->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dladapter: source-free domain adaptation for document layout detection"};
  app.footer(std::string("Set ") + kRunRootEnv + " to change where run directories are created.\n" + kExitCodeHelp);
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(DLA_VERSION) + " (" + DLA_GIT_REV + ")");

  std::vector<Subcommand> subs;
  subs.reserve(6);
  const char* plain_footer = "Config keys: none; every setting is a flag above.\n";

  {
    subs.push_back({app.add_subcommand("synth-gen", "Render a synthetic COCO-format page set"), cmd_synth_gen, {}});
    auto& s = subs.back();
    s.run.command = "synth-gen";
    add_common(s.app, s.run);
    add_arg(s.app, s.run, "preset", "Domain preset: source or target", "source");
    add_arg(s.app, s.run, "n", "Number of pages", "200");
    add_arg(s.app, s.run, "seed", "Seed of the first page (page i uses seed + i)", "0");
    s.app->footer(std::string(plain_footer) + kExitCodeHelp);
  }
  {
    subs.push_back({app.add_subcommand("train-source", "Supervised training on labeled source pages"),
                    cmd_train_source, {}});
    auto& s = subs.back();
    s.run.command = "train-source";
    add_common(s.app, s.run);
    add_arg(s.app, s.run, "train", "COCO annotations.json of the training set");
    add_arg(s.app, s.run, "val", "Optional COCO annotations.json evaluated after each epoch");
    add_arg(s.app, s.run, "mapping", "Builtin label mapping (pln4, dln4, dln10, m6doc10) or mapping file");
    add_config(s.app, s.run, describe_keys(source_config_keys()));
  }
  {
    subs.push_back({app.add_subcommand("adapt", "Dual-teacher adaptation on unlabeled target pages"), cmd_adapt, {}});
    auto& s = subs.back();
    s.run.command = "adapt";
    add_common(s.app, s.run);
    add_arg(s.app, s.run, "source-ckpt", "Source checkpoint");
    add_arg(s.app, s.run, "target", "Directory of target PNGs (or a synth-gen output), or a COCO file whose labels are ignored");
    add_arg(s.app, s.run, "eval", "Optional labeled COCO file, read only by the per-epoch evaluator");
    add_arg(s.app, s.run, "mapping", "Label mapping applied to --eval");
    add_config(s.app, s.run, describe_keys(adapt_config_keys()));
  }
  {
    subs.push_back({app.add_subcommand("eval", "mAP@0.5 of a checkpoint on a labeled set"), cmd_eval, {}});
    auto& s = subs.back();
    s.run.command = "eval";
    add_common(s.app, s.run);
    add_arg(s.app, s.run, "ckpt", "Checkpoint to evaluate");
    add_arg(s.app, s.run, "data", "COCO annotations.json");
    add_arg(s.app, s.run, "mapping", "Label mapping applied to --data");
    s.app->footer(std::string(plain_footer) + kExitCodeHelp);
  }
  {
    subs.push_back({app.add_subcommand("ablate", "Run the six-row selection/loss ablation grid"), cmd_ablate, {}});
    auto& s = subs.back();
    s.run.command = "ablate";
    add_common(s.app, s.run);
    add_arg(s.app, s.run, "source-ckpt", "Source checkpoint");
    add_arg(s.app, s.run, "target", "Directory of target PNGs (or a synth-gen output), or a COCO file whose labels are ignored");
    add_arg(s.app, s.run, "eval", "Labeled COCO file for the final evaluation");
    add_arg(s.app, s.run, "mapping", "Label mapping applied to --eval");
    add_arg(s.app, s.run, "seeds", "Comma-separated seeds; each row reports the median", "0");
    add_config(s.app, s.run, describe_keys(adapt_config_keys()));
  }
  {
    subs.push_back({app.add_subcommand("report", "Tables and plots from finished runs"), cmd_report, {}});
    auto& s = subs.back();
    s.run.command = "report";
    add_common(s.app, s.run);
    add_arg(s.app, s.run, "runs", "Directory searched recursively for metrics.json and ablation.csv");
    s.app->footer(std::string(plain_footer) + "Output defaults to <runs>/report.\n" + kExitCodeHelp);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << "\n" << app.help();
    return kUsage;
  }

  for (auto& s : subs) {
    if (!s.app->parsed()) continue;
    try {
      return s.fn(s.run);
    } catch (const Error& e) {
      std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
      return exit_code_for(e.kind());
    } catch (const std::exception& e) {
      std::cerr << "internal error: " << e.what() << "\n";
      return kInternal;
    }
  }
  return kUsage;
}
