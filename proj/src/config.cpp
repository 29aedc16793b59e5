#include "coupleface/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

#include "coupleface/binary_io.hpp"
#include "coupleface/error.hpp"
#include "coupleface/eval.hpp"

namespace coupleface {

std::string_view run_mode_name(RunMode mode) {
  switch (mode) {
    case RunMode::kArcfaceOnly: return "arcface_only";
    case RunMode::kFcdOnly: return "fcd_only";
    case RunMode::kCoupleface: return "coupleface";
    case RunMode::kCouplefacePlus: return "coupleface_plus";
    case RunMode::kAblationA: return "ablation_A";
    case RunMode::kAblationB: return "ablation_B";
    case RunMode::kAblationC: return "ablation_C";
    case RunMode::kAblationD: return "ablation_D";
    case RunMode::kAblationE: return "ablation_E";
  }
  return "coupleface";
}

RunMode parse_run_mode(std::string_view name) {
  for (RunMode m : {RunMode::kArcfaceOnly, RunMode::kFcdOnly, RunMode::kCoupleface,
                    RunMode::kCouplefacePlus, RunMode::kAblationA, RunMode::kAblationB,
                    RunMode::kAblationC, RunMode::kAblationD, RunMode::kAblationE}) {
    if (run_mode_name(m) == name) return m;
  }
  fail(ErrorCode::kConfigError, "unknown mode '" + std::string(name) + "'");
}

namespace {

std::string_view trim(std::string_view s) {
  const char* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  if (trim(s).empty()) return parts;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  fail(ErrorCode::kConfigError,
       "bad value '" + std::string(value) + "' for key '" + std::string(key) + "'");
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  text = trim(text);
  T out{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size()) bad_value(key, text);
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(out)) bad_value(key, text);
  }
  return out;
}

std::vector<std::size_t> parse_dims(std::string_view key, std::string_view text) {
  std::vector<std::size_t> out;
  if (trim(text) == "none") return out;
  for (auto p : split(text, ',')) out.push_back(parse_number<std::size_t>(key, p));
  return out;
}

std::vector<double> parse_reals(std::string_view key, std::string_view text) {
  std::vector<double> out;
  for (auto p : split(text, ',')) out.push_back(parse_number<double>(key, p));
  return out;
}

// "iter:divisor,iter:divisor"
std::vector<LrMilestone> parse_milestones(std::string_view key, std::string_view text) {
  std::vector<LrMilestone> out;
  if (trim(text) == "none") return out;
  for (auto p : split(text, ',')) {
    auto kv = split(p, ':');
    if (kv.size() != 2) bad_value(key, p);
    out.push_back({parse_number<std::size_t>(key, kv[0]), parse_number<double>(key, kv[1])});
  }
  return out;
}

std::vector<BetaStep> parse_beta(std::string_view key, std::string_view text) {
  std::vector<BetaStep> out;
  for (auto p : split(text, ',')) {
    auto kv = split(p, ':');
    if (kv.size() != 2) bad_value(key, p);
    out.push_back({parse_number<std::size_t>(key, kv[0]), parse_number<double>(key, kv[1])});
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  if (v.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>) {
      s += format_number(v[i]);
    } else {
      s += std::to_string(v[i]);
    }
  }
  return s;
}

std::string join_milestones(const std::vector<LrMilestone>& v) {
  if (v.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i].iter) + ":" + format_number(v[i].divisor);
  }
  return s;
}

std::string join_beta(const std::vector<BetaStep>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i].start_iter) + ":" + format_number(v[i].beta);
  }
  return s;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define CF_STRING(name) \
  Field { #name, [](RunConfig& c, std::string_view v) { c.name = std::string(v); }, \
          [](const RunConfig& c) { return c.name; } }
#define CF_COUNT(name) \
  Field { #name, [](RunConfig& c, std::string_view v) { c.name = parse_number<std::size_t>(#name, v); }, \
          [](const RunConfig& c) { return std::to_string(c.name); } }
#define CF_REAL(name) \
  Field { #name, [](RunConfig& c, std::string_view v) { c.name = parse_number<double>(#name, v); }, \
          [](const RunConfig& c) { return format_number(c.name); } }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      CF_STRING(dataset),
      CF_STRING(eval_dataset),
      CF_STRING(teacher_checkpoint),
      CF_STRING(checkpoint),
      CF_STRING(mining_embeddings),
      CF_COUNT(num_identities),
      CF_COUNT(per_identity),
      CF_COUNT(input_dim),
      CF_REAL(noise_sigma),
      CF_COUNT(eval_per_identity),
      Field{"teacher_hidden",
            [](RunConfig& c, std::string_view v) { c.teacher_hidden = parse_dims("teacher_hidden", v); },
            [](const RunConfig& c) { return join(c.teacher_hidden); }},
      CF_COUNT(teacher_embed_dim),
      Field{"student_hidden",
            [](RunConfig& c, std::string_view v) { c.student_hidden = parse_dims("student_hidden", v); },
            [](const RunConfig& c) { return join(c.student_hidden); }},
      CF_COUNT(student_embed_dim),
      CF_REAL(arc_scale),
      CF_REAL(arc_margin),
      CF_REAL(lr),
      CF_REAL(momentum),
      CF_REAL(weight_decay),
      CF_REAL(teacher_weight_decay),
      CF_COUNT(batch_size),
      CF_COUNT(teacher_iters),
      Field{"teacher_lr_milestones",
            [](RunConfig& c, std::string_view v) {
              c.teacher_lr_milestones = parse_milestones("teacher_lr_milestones", v);
            },
            [](const RunConfig& c) { return join_milestones(c.teacher_lr_milestones); }},
      CF_COUNT(total_iters),
      Field{"lr_milestones",
            [](RunConfig& c, std::string_view v) { c.lr_milestones = parse_milestones("lr_milestones", v); },
            [](const RunConfig& c) { return join_milestones(c.lr_milestones); }},
      Field{"mode", [](RunConfig& c, std::string_view v) { c.mode = parse_run_mode(trim(v)); },
            [](const RunConfig& c) { return std::string(run_mode_name(c.mode)); }},
      CF_COUNT(k),
      Field{"rad_variant", [](RunConfig& c, std::string_view v) { c.rad.kind = parse_rad_kind(trim(v)); },
            [](const RunConfig& c) { return std::string(rad_kind_name(c.rad.kind)); }},
      Field{"q", [](RunConfig& c, std::string_view v) { c.rad.q = parse_number<double>("q", v); },
            [](const RunConfig& c) { return format_number(c.rad.q); }},
      CF_REAL(alpha),
      Field{"beta_schedule",
            [](RunConfig& c, std::string_view v) { c.beta_schedule = parse_beta("beta_schedule", v); },
            [](const RunConfig& c) { return join_beta(c.beta_schedule); }},
      CF_COUNT(plus_iters),
      CF_REAL(plus_beta),
      CF_COUNT(probe_size),
      CF_COUNT(hist_bins),
      CF_COUNT(eval_n_pos),
      CF_COUNT(eval_n_neg),
      Field{"eval_fars", [](RunConfig& c, std::string_view v) { c.eval_fars = parse_reals("eval_fars", v); },
            [](const RunConfig& c) { return join(c.eval_fars); }},
      Field{"eval_distractors",
            [](RunConfig& c, std::string_view v) { c.eval_distractors = parse_dims("eval_distractors", v); },
            [](const RunConfig& c) { return join(c.eval_distractors); }},
      Field{"seed", [](RunConfig& c, std::string_view v) { c.seed = parse_number<std::uint64_t>("seed", v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
  };
  return table;
}

#undef CF_STRING
#undef CF_COUNT
#undef CF_REAL

const Field& find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  fail(ErrorCode::kConfigError, "unknown config key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  find_field(trim(key)).set(*this, trim(value));
}

std::string RunConfig::get(std::string_view key) const { return find_field(key).get(*this); }

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> v;
    for (const auto& f : fields()) v.push_back(f.key);
    return v;
  }();
  return k;
}

void RunConfig::validate() const {
  auto check_increasing = [](const std::vector<LrMilestone>& ms, const char* key) {
    for (std::size_t i = 0; i < ms.size(); ++i) {
      if (i > 0 && ms[i].iter <= ms[i - 1].iter) {
        fail(ErrorCode::kConfigError, std::string(key) + " must be strictly increasing");
      }
      if (!(ms[i].divisor > 0.0)) fail(ErrorCode::kConfigError, std::string(key) + " divisors must be > 0");
    }
  };
  check_increasing(lr_milestones, "lr_milestones");
  check_increasing(teacher_lr_milestones, "teacher_lr_milestones");
  if (!(alpha >= 0.0)) fail(ErrorCode::kConfigError, "alpha must be >= 0");
  if (!(plus_beta >= 0.0)) fail(ErrorCode::kConfigError, "plus_beta must be >= 0");
  if (beta_schedule.empty()) fail(ErrorCode::kConfigError, "beta_schedule must not be empty");
  for (std::size_t i = 0; i < beta_schedule.size(); ++i) {
    if (!(beta_schedule[i].beta >= 0.0)) fail(ErrorCode::kConfigError, "beta values must be >= 0");
    if (i > 0 && beta_schedule[i].start_iter <= beta_schedule[i - 1].start_iter) {
      fail(ErrorCode::kConfigError, "beta_schedule must be strictly increasing");
    }
  }
  if (!(rad.q >= 0.0)) fail(ErrorCode::kConfigError, "q must be >= 0");
  if (!(lr > 0.0)) fail(ErrorCode::kConfigError, "lr must be > 0");
  if (batch_size == 0) fail(ErrorCode::kConfigError, "batch_size must be >= 1");
  if (teacher_embed_dim != student_embed_dim) {
    fail(ErrorCode::kDimMismatch, "teacher_embed_dim " + std::to_string(teacher_embed_dim) +
                                      " != student_embed_dim " + std::to_string(student_embed_dim));
  }
  for (double far : eval_fars) {
    if (!(far > 0.0 && far <= 1.0)) fail(ErrorCode::kConfigError, "eval_fars must lie in (0, 1]");
  }
}

MlpSpec RunConfig::teacher_spec() const {
  return MlpSpec{input_dim, teacher_hidden, teacher_embed_dim, Activation::kRelu};
}

MlpSpec RunConfig::student_spec() const {
  return MlpSpec{input_dim, student_hidden, student_embed_dim, Activation::kRelu};
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    std::string_view line = text.substr(start, end == std::string_view::npos ? end : end - start);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (!line.empty()) {
      auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        fail(ErrorCode::kConfigError, "line " + std::to_string(line_no) + ": expected key = value");
      }
      cfg.set(line.substr(0, eq), line.substr(eq + 1));
    }
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  return parse(binary::read_file(path));
}

}  // namespace coupleface
