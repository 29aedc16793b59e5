#include "coupleface/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "coupleface/binary_io.hpp"
#include "coupleface/config.hpp"
#include "coupleface/data_io.hpp"
#include "coupleface/error.hpp"
#include "coupleface/eval.hpp"
#include "coupleface/mining.hpp"
#include "coupleface/model.hpp"
#include "coupleface/pipeline.hpp"

namespace coupleface::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Common {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig assemble_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  for (const auto& kv : c.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects KEY=VALUE, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

const std::string& require_path(const std::string& value, const char* key) {
  if (value.empty()) fail(ErrorCode::kConfigError, std::string(key) + " is not set");
  return value;
}

class Manifest {
 public:
  Manifest(std::string command, const RunConfig& cfg) {
    doc_["command"] = std::move(command);
    json config = json::object();
    for (const auto& [k, v] : cfg.entries()) config[k] = v;
    doc_["config"] = std::move(config);
    doc_["seed"] = cfg.seed;
    doc_["format_versions"] = {{"CFDS", kDatasetFormatVersion},
                               {"CFEM", kEmbeddingFormatVersion},
                               {"CFMD", kCheckpointFormatVersion},
                               {"CFHS", kInformativeSetsFormatVersion}};
    doc_["threads"] = worker_count();
    doc_["outputs"] = json::array();
  }

  void output(const fs::path& p) { doc_["outputs"].push_back(p.filename().string()); }
  json& operator[](const char* key) { return doc_[key]; }

  void write(const fs::path& dir) {
    doc_["timestamp"] = utc_timestamp();
    binary::write_file_atomic(dir / "run.json", doc_.dump(2) + "\n");
  }

 private:
  json doc_;
};

json probe_json(const ProbeStats& s) {
  return {{"mean_excess", s.mean_excess},
          {"fraction_above_margin", s.fraction_above_margin},
          {"couples", s.couples}};
}

void cmd_gen_data(const RunConfig& cfg, const fs::path& out, Manifest& m) {
  SyntheticParams p;
  p.num_identities = cfg.num_identities;
  p.per_identity = cfg.per_identity + cfg.eval_per_identity;
  p.input_dim = cfg.input_dim;
  p.noise_sigma = cfg.noise_sigma;
  p.seed = cfg.seed;
  LabeledDataset all = gen_synthetic(p);
  if (cfg.eval_per_identity == 0) {
    write_dataset(out / "train.cfds", all);
    m.output(out / "train.cfds");
    return;
  }
  auto [train, held] = split_holdout(all, cfg.eval_per_identity);
  write_dataset(out / "train.cfds", train);
  write_dataset(out / "eval.cfds", held);
  m.output(out / "train.cfds");
  m.output(out / "eval.cfds");
}

void cmd_train_teacher(const RunConfig& cfg, const fs::path& out, Manifest& m) {
  LabeledDataset ds = read_dataset(require_path(cfg.dataset, "dataset"));
  TeacherResult r = train_teacher(cfg, ds);
  write_checkpoint(out / "teacher.cfmd", r.model);
  r.log.write_csv(out / "teacher_log.csv");
  m.output(out / "teacher.cfmd");
  m.output(out / "teacher_log.csv");
  if (!r.log.records.empty()) m["final_loss"] = r.log.records.back().loss_total;
}

void cmd_extract(const RunConfig& cfg, const fs::path& out, Manifest& m) {
  const std::string& model_path =
      cfg.checkpoint.empty() ? require_path(cfg.teacher_checkpoint, "checkpoint") : cfg.checkpoint;
  MlpModel model = read_checkpoint(model_path);
  LabeledDataset ds = read_dataset(require_path(cfg.dataset, "dataset"));
  write_embeddings(out / "features.cfem", extract_features(model, ds, worker_count()));
  m.output(out / "features.cfem");
}

void cmd_distill(const RunConfig& cfg, const fs::path& out, Manifest& m) {
  MlpModel teacher = read_checkpoint(require_path(cfg.teacher_checkpoint, "teacher_checkpoint"));
  LabeledDataset ds = read_dataset(require_path(cfg.dataset, "dataset"));
  std::optional<EmbeddingMatrix> mining;
  if (!cfg.mining_embeddings.empty()) mining = read_embeddings(cfg.mining_embeddings);

  DistillResult r = distill(cfg, teacher, ds, mining ? &*mining : nullptr);
  write_checkpoint(out / "student.cfmd", r.student);
  r.log.write_csv(out / "train_log.csv");
  write_informative_sets(out / "informative_sets.cfhs", r.sets);
  write_histogram_csv(out / "probe_histogram.csv", r.histogram);
  for (const char* f : {"student.cfmd", "train_log.csv", "informative_sets.cfhs",
                        "probe_histogram.csv"}) {
    m.output(out / f);
  }
  m["lr_restart_iter"] = r.lr_restart_iter ? json(*r.lr_restart_iter) : json(nullptr);
  m["probe_initial"] = probe_json(r.probe_initial);
  m["probe_final"] = probe_json(r.probe_final);
}

void cmd_eval(const RunConfig& cfg, const fs::path& out, Manifest& m) {
  MlpModel model = read_checkpoint(require_path(cfg.checkpoint, "checkpoint"));
  const std::string& data = cfg.eval_dataset.empty() ? require_path(cfg.dataset, "eval_dataset")
                                                     : cfg.eval_dataset;
  LabeledDataset ds = read_dataset(data);
  EmbeddingMatrix features = extract_features(model, ds, worker_count());

  EvalProtocol protocol;
  protocol.n_pos = cfg.eval_n_pos;
  protocol.n_neg = cfg.eval_n_neg;
  protocol.fars = cfg.eval_fars;
  protocol.distractor_counts = cfg.eval_distractors;
  protocol.seed = cfg.seed;
  EvalReport report = evaluate_embeddings(features, protocol);
  write_metrics_csv(out / "metrics.csv", report.metrics);
  write_similarity_csv(out / "similarity.csv", report.scores);
  m.output(out / "metrics.csv");
  m.output(out / "similarity.csv");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

json load_manifest(const fs::path& path) {
  if (!fs::exists(path)) return json();
  json j = json::parse(binary::read_file(path), nullptr, false);
  return j.is_object() ? j : json();
}

// Mode of the run that produced a metrics directory. An eval manifest points
// at its checkpoint, whose own manifest names the training mode.
std::string run_label(const fs::path& manifest_path) {
  json j = load_manifest(manifest_path);
  if (j.is_null()) return "-";
  const std::string command = j.value("command", "");
  if (command == "train-teacher") return "teacher";
  if (command == "eval" && j.contains("config")) {
    std::string ckpt = j["config"].value("checkpoint", "");
    if (!ckpt.empty()) {
      fs::path producer = fs::path(ckpt).parent_path() / "run.json";
      if (producer != manifest_path) {
        json p = load_manifest(producer);
        if (p.value("command", "") == "train-teacher") return "teacher";
        if (p.value("command", "") == "distill") return p["config"].value("mode", "-");
      }
    }
  }
  if (j.contains("config")) return j["config"].value("mode", "-");
  return "-";
}

void cmd_report(const std::vector<std::string>& dirs, std::ostream& out) {
  struct Row {
    std::string run, mode;
    std::map<std::string, std::string> values;
  };
  std::vector<std::string> columns;
  std::vector<Row> rows;

  for (const auto& d : dirs) {
    fs::path csv = fs::path(d) / "metrics.csv";
    if (!fs::exists(csv)) fail(ErrorCode::kMissingMetrics, "no metrics.csv in " + d);
    std::stringstream text(binary::read_file(csv));
    std::string line;
    std::getline(text, line);
    if (line != "metric,operating_point,value,n_pos,n_neg") {
      fail(ErrorCode::kMissingMetrics, "unexpected metrics header in " + csv.string());
    }
    std::string name = fs::path(d).lexically_normal().string();
    while (name.size() > 1 && name.back() == '/') name.pop_back();
    Row row{name, "-", {}};
    row.mode = run_label(fs::path(d) / "run.json");
    while (std::getline(text, line)) {
      if (line.empty()) continue;
      auto cells = split_csv_line(line);
      if (cells.size() != 5) fail(ErrorCode::kMissingMetrics, "malformed row in " + csv.string());
      std::string col = cells[0] + "@" + cells[1];
      if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
      row.values[col] = cells[2];
    }
    rows.push_back(std::move(row));
  }

  std::vector<std::string> header{"run", "mode"};
  header.insert(header.end(), columns.begin(), columns.end());
  std::vector<std::vector<std::string>> table{header};
  for (const auto& r : rows) {
    std::vector<std::string> cells{r.run, r.mode};
    for (const auto& c : columns) {
      auto it = r.values.find(c);
      cells.push_back(it == r.values.end() ? "-" : it->second);
    }
    table.push_back(std::move(cells));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& t : table)
    for (std::size_t i = 0; i < t.size(); ++i) width[i] = std::max(width[i], t[i].size());
  for (const auto& t : table) {
    std::string line;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (i) line += "  ";
      line += t[i];
      if (i + 1 < t.size()) line.append(width[i] - t[i].size(), ' ');
    }
    out << line << '\n';
  }
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "Config file (key = value)");
  sub->add_option("--out", c.out_dir, "Output directory")->required();
  sub->add_option("--set", c.overrides, "Override a config key (KEY=VALUE)")->take_all();
  sub->add_option("--seed", c.seed, "Random seed");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CoupleFace distillation toolkit", "coupleface"};
  app.require_subcommand(1);
  Common common;
  std::vector<std::string> report_dirs;

  using Handler = void (*)(const RunConfig&, const fs::path&, Manifest&);
  const std::vector<std::pair<std::string, Handler>> commands{
      {"gen-data", cmd_gen_data},  {"train-teacher", cmd_train_teacher},
      {"extract", cmd_extract},    {"distill", cmd_distill},
      {"eval", cmd_eval},
  };
  const std::map<std::string, std::string> help{
      {"gen-data", "Generate the synthetic train/eval datasets"},
      {"train-teacher", "Train the teacher with ArcFace"},
      {"extract", "Extract embeddings with a checkpoint"},
      {"distill", "Distill a student from the teacher"},
      {"eval", "Verification and rank-1 metrics"},
  };
  for (const auto& [name, fn] : commands) add_common(app.add_subcommand(name, help.at(name)), common);
  CLI::App* report = app.add_subcommand("report", "Summarize metrics of run directories");
  report->add_option("dirs", report_dirs, "Run directories")->required();

  std::vector<std::string> argv_store{"coupleface"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (report->parsed()) {
      cmd_report(report_dirs, out);
      return kExitOk;
    }
    for (const auto& [name, fn] : commands) {
      if (!app.got_subcommand(name)) continue;
      RunConfig cfg = assemble_config(common);
      fs::path dir(common.out_dir);
      fs::create_directories(dir);
      Manifest manifest(name, cfg);
      fn(cfg, dir, manifest);
      manifest.write(dir);
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::kNumericalFailure ? kExitNumerical : kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace coupleface::cli
