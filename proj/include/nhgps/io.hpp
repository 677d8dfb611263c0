#pragma once

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nhgps/error.hpp"
#include "nhgps/gof.hpp"
#include "nhgps/inference.hpp"
#include "nhgps/model.hpp"
#include "nhgps/simulate.hpp"

namespace nhgps {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// 17 significant digits: enough to round-trip any double.
[[nodiscard]] inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline double parse_real(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ValidationError(where + ": '" + s + "' is not a number");
  }
  if (used != s.size()) throw ValidationError(where + ": '" + s + "' is not a number");
  return v;
}

inline long parse_integer(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(s, &used);
  } catch (const std::exception&) {
    throw ValidationError(where + ": '" + s + "' is not an integer");
  }
  if (used != s.size()) throw ValidationError(where + ": '" + s + "' is not an integer");
  return v;
}

inline std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + p.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot open " + p.string() + " for writing");
  return out;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& text) {
  auto out = open_out(p);
  out << text;
  if (!out) throw IoError("failed writing " + p.string());
}

}  // namespace detail

// ---------------------------------------------------------------- events

// CSV with a `time` column and optional `type` column; `# T=<value>` declares the window.
[[nodiscard]] inline EventSequence parse_events(std::istream& in, std::optional<double> window = {},
                                                int type_count = 0, const std::string& source = "<events>") {
  std::string line;
  std::size_t lineno = 0;
  std::optional<double> declared;
  std::vector<std::string> header;
  std::vector<double> times;
  std::vector<int> types;
  int time_col = -1, type_col = -1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      std::string body = detail::trim(t.substr(1));
      if (body.rfind("T=", 0) == 0) declared = detail::parse_real(detail::trim(body.substr(2)), where);
      continue;
    }
    if (header.empty()) {
      header = detail::split(t, ',');
      for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "time") time_col = static_cast<int>(c);
        else if (header[c] == "type") type_col = static_cast<int>(c);
        else throw ValidationError(where + ": unknown column '" + header[c] + "' (expected time, type)");
      }
      if (time_col < 0) throw ValidationError(where + ": header must contain a 'time' column");
      continue;
    }
    const auto cells = detail::split(t, ',');
    if (cells.size() != header.size()) {
      throw ValidationError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(cells.size()));
    }
    const double v = detail::parse_real(cells[static_cast<std::size_t>(time_col)], where + ":" + std::to_string(time_col + 1));
    if (!std::isfinite(v) || v < 0.0) throw ValidationError(where + ": event time must be finite and non-negative");
    times.push_back(v);
    if (type_col >= 0) {
      const long k = detail::parse_integer(cells[static_cast<std::size_t>(type_col)], where + ":" + std::to_string(type_col + 1));
      if (k < 0) throw ValidationError(where + ": event type must be non-negative");
      types.push_back(static_cast<int>(k));
    }
  }
  if (header.empty()) throw ValidationError(source + ": missing header line");
  const std::optional<double> w = window ? window : declared;
  if (!w) throw ValidationError(source + ": no window given (add '# T=<value>' or set it in the config)");
  if (declared && window && std::abs(*declared - *window) > 1e-12 * std::max(1.0, *window)) {
    throw ValidationError(source + ": declared window " + format_real(*declared) + " differs from configured " +
                          format_real(*window));
  }
  try {
    return EventSequence::make(std::move(times), *w, std::move(types), type_count);
  } catch (const ValidationError& e) {
    throw ValidationError(source + ": " + e.what());
  }
}

[[nodiscard]] inline EventSequence load_events(const fs::path& path, std::optional<double> window = {},
                                               int type_count = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open event file " + path.string());
  return parse_events(in, window, type_count, path.string());
}

[[nodiscard]] inline std::string format_events(const EventSequence& ev) {
  std::ostringstream out;
  out << "# T=" << format_real(ev.window) << '\n' << (ev.labelled() ? "time,type\n" : "time\n");
  for (std::size_t i = 0; i < ev.size(); ++i) {
    out << format_real(ev.times[i]);
    if (ev.labelled()) out << ',' << ev.types[i];
    out << '\n';
  }
  return out.str();
}

inline void save_events(const fs::path& path, const EventSequence& ev) { detail::write_file(path, format_events(ev)); }

// ---------------------------------------------------------------- config

struct SimulateSettings {
  std::vector<double> lambda{320.0};  // one per dimension, or one shared value
  double window = 1.0;
};

struct RunConfig {
  ModelHyper hyper;
  int dims = 1;
  std::string coupling = "full";             // full | self | custom
  std::vector<std::vector<bool>> coupling_mask;  // used when coupling == custom
  std::optional<Method> method;
  GibbsConfig gibbs;
  ViConfig vi;
  std::optional<SimulateSettings> simulate;
  std::uint64_t seed = 0;
  std::optional<double> window;
  std::string events_path;
  std::string output_dir;

  [[nodiscard]] MultivariateModel model() const {
    MultivariateModel m;
    m.dims = dims;
    const auto r = static_cast<std::size_t>(dims);
    m.background.assign(r, hyper.background);
    m.lambda_prior.assign(r, hyper.lambda_prior);
    m.coupling.assign(r, std::vector<std::optional<MemoryTerm>>(r));
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < r; ++j) {
        const bool on = coupling == "full" || (coupling == "self" && i == j) ||
                        (coupling == "custom" && coupling_mask[i][j]);
        if (on) m.coupling[i][j] = MemoryTerm{hyper.memory, hyper.decay};
      }
    }
    m.validate();
    return m;
  }

  [[nodiscard]] FitOptions fit_options() const {
    require(method.has_value(), "config has no inference block (add 'vi' or 'gibbs')");
    FitOptions o;
    o.method = *method;
    o.gibbs = gibbs;
    o.vi = vi;
    o.gibbs.seed = seed;
    o.vi.seed = seed;
    return o;
  }

  [[nodiscard]] std::vector<double> simulate_lambdas() const {
    require(simulate.has_value(), "config has no 'simulate' block");
    if (simulate->lambda.size() == 1) return std::vector<double>(static_cast<std::size_t>(dims), simulate->lambda[0]);
    require(simulate->lambda.size() == static_cast<std::size_t>(dims), "simulate.lambda needs one value per dimension");
    return simulate->lambda;
  }
};

namespace detail {

// Walks a JSON object, recording consumed keys, missing required keys and type errors.
class ConfigReader {
 public:
  explicit ConfigReader(std::vector<std::string>& missing) : missing_(missing) {}

  const Json* child(const Json& obj, const std::string& path, const std::string& key, bool required) {
    seen_.insert(path + key);
    if (obj.is_object() && obj.contains(key)) return &obj[key];
    if (required) missing_.push_back(path + key);
    return nullptr;
  }

  template <class T>
  void get(const Json& obj, const std::string& path, const std::string& key, T& out, bool required = false) {
    const Json* v = child(obj, path, key, required);
    if (!v) return;
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v->is_number()) throw std::invalid_argument("number");
        out = v->template get<double>();
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw std::invalid_argument("boolean");
        out = v->template get<bool>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v->is_string()) throw std::invalid_argument("string");
        out = v->template get<std::string>();
      } else {
        if (!v->is_number_integer() || v->template get<long long>() < 0) throw std::invalid_argument("non-negative integer");
        out = static_cast<T>(v->template get<long long>());
      }
    } catch (const std::invalid_argument& e) {
      throw ValidationError("config key '" + path + key + "' must be a " + e.what());
    }
  }

  void check_unknown(const Json& obj, const std::string& path) {
    if (!obj.is_object()) throw ValidationError("config section '" + (path.empty() ? "<root>" : path) + "' must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (!seen_.count(path + it.key())) throw ValidationError("unknown config key '" + path + it.key() + "'");
    }
  }

 private:
  std::vector<std::string>& missing_;
  std::set<std::string> seen_;
};

inline void read_rbf(ConfigReader& r, const Json* obj, const std::string& path, RbfParams& p, bool required) {
  if (!obj) {
    if (required) {
      Json empty = Json::object();
      r.get(empty, path, "amplitude", p.amplitude, true);
      r.get(empty, path, "lengthscale", p.lengthscale, true);
    }
    return;
  }
  r.get(*obj, path, "amplitude", p.amplitude, true);
  r.get(*obj, path, "lengthscale", p.lengthscale, true);
  r.check_unknown(*obj, path);
}

}  // namespace detail

[[nodiscard]] inline Json config_to_json(const RunConfig& c) {
  Json j;
  Json model;
  model["background"] = {{"amplitude", c.hyper.background.amplitude}, {"lengthscale", c.hyper.background.lengthscale}};
  model["memory"] = {{"amplitude", c.hyper.memory.amplitude}, {"lengthscale", c.hyper.memory.lengthscale}};
  model["decay"] = c.hyper.decay.rate;
  model["lambda_prior"] = {{"shape", c.hyper.lambda_prior.shape}, {"rate", c.hyper.lambda_prior.rate}};
  model["dims"] = c.dims;
  if (c.coupling == "custom") {
    Json mask = Json::array();
    for (const auto& row : c.coupling_mask) {
      Json jr = Json::array();
      for (bool b : row) jr.push_back(b);
      mask.push_back(jr);
    }
    model["coupling"] = mask;
  } else {
    model["coupling"] = c.coupling;
  }
  j["model"] = model;
  j["seed"] = c.seed;
  j["window"] = c.window ? Json(*c.window) : Json(nullptr);
  if (c.method == Method::vi) {
    Json order = Json::array();
    for (ViFactor f : c.vi.order) order.push_back(to_string(f));
    j["vi"] = {{"inducing_count", c.vi.inducing_count}, {"grid_count", c.vi.grid_count},
               {"max_rounds", c.vi.max_rounds},         {"tol", c.vi.tol},
               {"jitter", c.vi.jitter},                 {"order", order},
               {"learn_hyper", c.vi.learn_hyper},       {"step_size", c.vi.step_size}};
  } else if (c.method == Method::gibbs) {
    j["gibbs"] = {{"iterations", c.gibbs.iterations},
                  {"burn_in", c.gibbs.burn_in ? Json(*c.gibbs.burn_in) : Json(nullptr)},
                  {"thin", c.gibbs.thin},
                  {"learn_hyper", c.gibbs.learn_hyper},
                  {"hyper_every", c.gibbs.hyper_every},
                  {"grad_average_window", c.gibbs.grad_average_window},
                  {"step_size", c.gibbs.step_size},
                  {"grid_points", c.gibbs.grid_points},
                  {"max_snapshots", c.gibbs.max_snapshots},
                  {"horizon", c.gibbs.horizon}};
  }
  if (c.simulate) {
    j["simulate"] = {{"lambda", c.simulate->lambda.size() == 1 ? Json(c.simulate->lambda[0]) : Json(c.simulate->lambda)},
                     {"window", c.simulate->window}};
  }
  j["paths"] = {{"events", c.events_path}, {"output", c.output_dir}};
  return j;
}

// Strict parse: unknown keys are errors and every missing required key is listed.
[[nodiscard]] inline RunConfig config_from_json(const Json& j) {
  RunConfig c;
  std::vector<std::string> missing;
  detail::ConfigReader r(missing);
  const Json root = j.is_null() ? Json::object() : j;
  if (!root.is_object()) throw ValidationError("config must be a JSON object");

  const Json* model = r.child(root, "", "model", true);
  const Json empty = Json::object();
  const Json& m = model ? *model : empty;
  detail::read_rbf(r, r.child(m, "model.", "background", true), "model.background.", c.hyper.background, true);
  detail::read_rbf(r, r.child(m, "model.", "memory", true), "model.memory.", c.hyper.memory, true);
  r.get(m, "model.", "decay", c.hyper.decay.rate, true);
  const Json* prior = r.child(m, "model.", "lambda_prior", true);
  r.get(prior ? *prior : empty, "model.lambda_prior.", "shape", c.hyper.lambda_prior.shape, true);
  r.get(prior ? *prior : empty, "model.lambda_prior.", "rate", c.hyper.lambda_prior.rate, true);
  if (prior) r.check_unknown(*prior, "model.lambda_prior.");
  std::size_t dims = 1;
  r.get(m, "model.", "dims", dims);
  c.dims = static_cast<int>(dims);
  if (const Json* cp = r.child(m, "model.", "coupling", false)) {
    if (cp->is_string()) {
      c.coupling = cp->get<std::string>();
      require(c.coupling == "full" || c.coupling == "self", "model.coupling must be 'full', 'self' or a boolean matrix");
    } else if (cp->is_array()) {
      c.coupling = "custom";
      for (const auto& row : *cp) {
        require(row.is_array(), "model.coupling rows must be arrays of booleans");
        std::vector<bool> mask;
        for (const auto& b : row) {
          require(b.is_boolean(), "model.coupling entries must be booleans");
          mask.push_back(b.get<bool>());
        }
        c.coupling_mask.push_back(mask);
      }
    } else {
      throw ValidationError("model.coupling must be 'full', 'self' or a boolean matrix");
    }
  }
  if (model) r.check_unknown(*model, "model.");

  r.get(root, "", "seed", c.seed, true);
  if (const Json* w = r.child(root, "", "window", false); w && !w->is_null()) {
    require(w->is_number(), "config key 'window' must be a number");
    c.window = w->get<double>();
  }

  const Json* vi = r.child(root, "", "vi", false);
  const Json* gibbs = r.child(root, "", "gibbs", false);
  if (vi && gibbs) throw ValidationError("config must contain exactly one of 'vi' and 'gibbs'");
  if (vi) {
    c.method = Method::vi;
    r.get(*vi, "vi.", "inducing_count", c.vi.inducing_count);
    r.get(*vi, "vi.", "grid_count", c.vi.grid_count);
    r.get(*vi, "vi.", "max_rounds", c.vi.max_rounds);
    r.get(*vi, "vi.", "tol", c.vi.tol);
    r.get(*vi, "vi.", "jitter", c.vi.jitter);
    if (const Json* ord = r.child(*vi, "vi.", "order", false)) {
      require(ord->is_array() && ord->size() == 4, "vi.order must list the four factors");
      for (std::size_t i = 0; i < 4; ++i) {
        require((*ord)[i].is_string(), "vi.order entries must be strings");
        c.vi.order[i] = parse_vi_factor((*ord)[i].get<std::string>());
      }
    }
    r.get(*vi, "vi.", "learn_hyper", c.vi.learn_hyper);
    r.get(*vi, "vi.", "step_size", c.vi.step_size);
    r.check_unknown(*vi, "vi.");
  }
  if (gibbs) {
    c.method = Method::gibbs;
    r.get(*gibbs, "gibbs.", "iterations", c.gibbs.iterations);
    if (const Json* b = r.child(*gibbs, "gibbs.", "burn_in", false); b && !b->is_null()) {
      require(b->is_number_integer() && b->get<long long>() >= 0, "gibbs.burn_in must be a non-negative integer");
      c.gibbs.burn_in = static_cast<std::size_t>(b->get<long long>());
    }
    r.get(*gibbs, "gibbs.", "thin", c.gibbs.thin);
    r.get(*gibbs, "gibbs.", "learn_hyper", c.gibbs.learn_hyper);
    r.get(*gibbs, "gibbs.", "hyper_every", c.gibbs.hyper_every);
    r.get(*gibbs, "gibbs.", "grad_average_window", c.gibbs.grad_average_window);
    r.get(*gibbs, "gibbs.", "step_size", c.gibbs.step_size);
    r.get(*gibbs, "gibbs.", "grid_points", c.gibbs.grid_points);
    r.get(*gibbs, "gibbs.", "max_snapshots", c.gibbs.max_snapshots);
    r.get(*gibbs, "gibbs.", "horizon", c.gibbs.horizon);
    r.check_unknown(*gibbs, "gibbs.");
  }
  if (const Json* sim = r.child(root, "", "simulate", false)) {
    SimulateSettings s;
    if (const Json* l = r.child(*sim, "simulate.", "lambda", false)) {
      s.lambda.clear();
      if (l->is_number()) {
        s.lambda.push_back(l->get<double>());
      } else {
        require(l->is_array() && !l->empty(), "simulate.lambda must be a number or a non-empty array");
        for (const auto& v : *l) {
          require(v.is_number(), "simulate.lambda entries must be numbers");
          s.lambda.push_back(v.get<double>());
        }
      }
    }
    r.get(*sim, "simulate.", "window", s.window);
    r.check_unknown(*sim, "simulate.");
    c.simulate = s;
  }
  if (const Json* paths = r.child(root, "", "paths", false)) {
    r.get(*paths, "paths.", "events", c.events_path);
    r.get(*paths, "paths.", "output", c.output_dir);
    r.check_unknown(*paths, "paths.");
  }
  if (!missing.empty()) {
    std::string msg = "config is missing required key(s):";
    for (const auto& k : missing) msg += " " + k;
    throw ValidationError(msg);
  }
  r.check_unknown(root, "");

  c.hyper.validate();
  require(c.dims >= 1, "model.dims must be at least 1");
  if (c.coupling == "custom") {
    require(c.coupling_mask.size() == static_cast<std::size_t>(c.dims), "model.coupling must be dims x dims");
    for (const auto& row : c.coupling_mask)
      require(row.size() == static_cast<std::size_t>(c.dims), "model.coupling must be dims x dims");
  }
  if (c.window) require(*c.window > 0.0, "window must be positive");
  if (c.simulate) {
    require(c.simulate->window > 0.0, "simulate.window must be positive");
    for (double l : c.simulate->lambda) require(l > 0.0, "simulate.lambda must be positive");
  }
  if (c.method == Method::vi) {
    require(c.vi.inducing_count > 0 && c.vi.max_rounds > 0, "vi counts must be positive");
    c.vi.validate();
  }
  if (c.method == Method::gibbs) {
    require(c.gibbs.iterations > 0, "gibbs.iterations must be positive");
    c.gibbs.validate();
  }
  (void)c.model();
  return c;
}

[[nodiscard]] inline RunConfig parse_config(const std::string& text, const std::string& source = "<config>") {
  Json j;
  if (detail::trim(text).empty()) {
    j = Json::object();
  } else {
    try {
      j = Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw ValidationError(source + ": " + e.what());
    }
  }
  return config_from_json(j);
}

[[nodiscard]] inline RunConfig load_config(const fs::path& path) {
  return parse_config(detail::read_file(path), path.string());
}

[[nodiscard]] inline std::string format_config(const RunConfig& c) { return config_to_json(c).dump(2) + "\n"; }

// `section.key=value` on the fully echoed config; the key must already exist.
inline void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, "override '" + assignment + "' must look like section.key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json* node = &j;
  for (const auto& part : detail::split(key, '.')) {
    require(node->is_object() && node->contains(part), "override refers to unknown config key '" + key + "'");
    node = &(*node)[part];
  }
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::parse_error&) {
    value = raw;  // bare strings need no quotes
  }
  *node = value;
}

[[nodiscard]] inline RunConfig with_overrides(const RunConfig& c, const std::vector<std::string>& overrides) {
  if (overrides.empty()) return c;
  Json j = config_to_json(c);
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

// ---------------------------------------------------------------- manifests

[[nodiscard]] inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("SHA-256 computation failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return out.str();
}

struct ManifestEntry {
  std::string path;  // relative to the bundle directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct Manifest {
  std::string kind;
  bool complete = true;
  std::vector<ManifestEntry> files;
};

// Writes files under `dir` and keeps the manifest in step.
class BundleWriter {
 public:
  BundleWriter(fs::path dir, std::string kind) : dir_(std::move(dir)) { manifest_.kind = std::move(kind); }

  void write(const std::string& rel, const std::string& text) {
    detail::write_file(dir_ / rel, text);
    manifest_.files.push_back({rel, sha256_hex(text), text.size()});
  }

  void write_json(const std::string& rel, const Json& j) { write(rel, j.dump(2) + "\n"); }

  Manifest finish(bool complete = true) {
    manifest_.complete = complete;
    Json files = Json::array();
    for (const auto& f : manifest_.files) files.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    const Json j = {{"kind", manifest_.kind}, {"complete", complete}, {"files", files}};
    detail::write_file(dir_ / "manifest.json", j.dump(2) + "\n");
    return manifest_;
  }

  [[nodiscard]] const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  Manifest manifest_;
};

[[nodiscard]] inline Manifest load_manifest(const fs::path& dir) {
  Json j;
  try {
    j = Json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const Json::exception& e) {
    throw IoError("unreadable manifest in " + dir.string() + ": " + e.what());
  }
  Manifest m;
  m.kind = j.value("kind", "");
  m.complete = j.value("complete", false);
  for (const auto& f : j.at("files")) {
    m.files.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>(), f.at("bytes").get<std::uintmax_t>()});
  }
  return m;
}

// Re-hashes every listed file; returns the paths that no longer match.
[[nodiscard]] inline std::vector<std::string> verify_manifest(const fs::path& dir) {
  std::vector<std::string> bad;
  for (const auto& f : load_manifest(dir).files) {
    std::error_code ec;
    if (!fs::exists(dir / f.path, ec) || sha256_hex(detail::read_file(dir / f.path)) != f.sha256) bad.push_back(f.path);
  }
  return bad;
}

// ---------------------------------------------------------------- numeric tables

[[nodiscard]] inline std::string format_table(const std::vector<std::string>& header,
                                              const std::vector<std::vector<double>>& columns) {
  std::ostringstream out;
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  out << '\n';
  const std::size_t rows = columns.empty() ? 0 : columns.front().size();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << format_real(columns[c][r]);
    out << '\n';
  }
  return out.str();
}

[[nodiscard]] inline std::string format_matrix(const Eigen::MatrixXd& m, const std::string& prefix = "c") {
  std::ostringstream out;
  for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << prefix << c;
  out << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << format_real(m(r, c));
    out << '\n';
  }
  return out.str();
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  [[nodiscard]] std::vector<double> column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    require<IoError>(it != header.end(), "table has no column '" + name + "'");
    const auto c = static_cast<std::size_t>(it - header.begin());
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
  }

  [[nodiscard]] Eigen::MatrixXd matrix() const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(header.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < header.size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return m;
  }
};

[[nodiscard]] inline Table parse_table(const std::string& text, const std::string& source) {
  Table t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    if (t.header.empty()) {
      t.header = detail::split(detail::trim(line), ',');
      continue;
    }
    const auto cells = detail::split(detail::trim(line), ',');
    if (cells.size() != t.header.size()) throw IoError(source + ":" + std::to_string(lineno) + ": ragged row");
    std::vector<double> row;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      try {
        row.push_back(detail::parse_real(cells[c], source + ":" + std::to_string(lineno) + ":" + std::to_string(c + 1)));
      } catch (const ValidationError& e) {
        throw IoError(e.what());
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

[[nodiscard]] inline Table load_table(const fs::path& p) { return parse_table(detail::read_file(p), p.string()); }

[[nodiscard]] inline Json load_json(const fs::path& p) {
  try {
    return Json::parse(detail::read_file(p));
  } catch (const Json::parse_error& e) {
    throw IoError(p.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- GOF bundles

inline Json gof_summary_json(const GofReport& r) {
  return {{"n", r.tau.size()}, {"ks_statistic", r.statistic}, {"p_value", r.p_value}, {"band", r.qq.band}, {"tau", r.tau}};
}

[[nodiscard]] inline std::string format_qq(const GofReport& r) {
  std::vector<double> th, em, lo, hi;
  for (const auto& p : r.qq.points) {
    th.push_back(p.theoretical);
    em.push_back(p.empirical);
    lo.push_back(p.theoretical - r.qq.band);
    hi.push_back(p.theoretical + r.qq.band);
  }
  return format_table({"theoretical", "empirical", "band_lo", "band_hi"}, {th, em, lo, hi});
}

inline void write_gof(BundleWriter& w, const std::string& prefix, const GofReport& r) {
  w.write_json(prefix + "summary.json", gof_summary_json(r));
  w.write(prefix + "qq.csv", format_qq(r));
}

inline Manifest save_gof(const GofReport& r, const fs::path& dir) {
  BundleWriter w(dir, "gof");
  write_gof(w, "", r);
  return w.finish();
}

[[nodiscard]] inline GofReport load_gof(const fs::path& dir) {
  const Json s = load_json(dir / "summary.json");
  return gof_report(s.at("tau").get<std::vector<double>>());
}

// ---------------------------------------------------------------- ground truth

// truth.json holds bounds, window and seed; the sampled functions go to one CSV each.
inline void write_truth(BundleWriter& w, const std::string& prefix, const GroundTruth& gt) {
  Json memory = Json::array();
  for (int r = 0; r < gt.dims(); ++r) {
    const auto& bg = gt.background[static_cast<std::size_t>(r)];
    w.write(prefix + "background_" + std::to_string(r) + ".csv", format_table({"time", "value"}, {bg.grid, bg.values}));
    for (int m = 0; m < gt.dims(); ++m) {
      const auto& mt = gt.memory[static_cast<std::size_t>(r)][static_cast<std::size_t>(m)];
      if (!mt) continue;
      const std::string name = "memory_" + std::to_string(r) + "_" + std::to_string(m) + ".csv";
      w.write(prefix + name, format_table({"lag", "value"}, {mt->shape.grid, mt->shape.values}));
      memory.push_back({{"target", r}, {"source", m}, {"decay", mt->decay.rate}, {"file", name}});
    }
  }
  w.write_json(prefix + "truth.json",
               {{"window", gt.window}, {"seed", gt.seed}, {"lambda", gt.lambda}, {"memory", memory}});
}

// The model field is left default: only the sampled functions are needed to score against truth.
[[nodiscard]] inline GroundTruth load_truth(const fs::path& dir) {
  const Json j = load_json(dir / "truth.json");
  GroundTruth gt;
  try {
    gt.window = j.at("window").get<double>();
    gt.seed = j.at("seed").get<std::uint64_t>();
    gt.lambda = j.at("lambda").get<std::vector<double>>();
    const auto dims = gt.lambda.size();
    gt.memory.assign(dims, std::vector<std::optional<MemoryTruth>>(dims));
    for (std::size_t r = 0; r < dims; ++r) {
      const Table t = load_table(dir / ("background_" + std::to_string(r) + ".csv"));
      gt.background.push_back({t.column("time"), t.column("value"), false});
    }
    for (const auto& m : j.at("memory")) {
      const Table t = load_table(dir / m.at("file").get<std::string>());
      MemoryTruth mt{{t.column("lag"), t.column("value"), true}, DecayParam{m.at("decay").get<double>()}};
      gt.memory.at(m.at("target").get<std::size_t>()).at(m.at("source").get<std::size_t>()) = std::move(mt);
    }
  } catch (const Json::exception& e) {
    throw IoError(dir.string() + "/truth.json: " + e.what());
  } catch (const std::out_of_range&) {
    throw IoError(dir.string() + "/truth.json: memory entry out of range");
  }
  return gt;
}

// ---------------------------------------------------------------- fit bundles

namespace detail {

inline Json kernel_trace_json(const std::vector<std::vector<double>>& trace) { return Json(trace); }

inline void save_vi_dimension(BundleWriter& w, const std::string& base, const DimensionFit& d) {
  const auto& s = *d.vi;
  std::vector<double> idx(s.elbo_trace.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<double>(i);
  w.write(base + "elbo_trace.csv", format_table({"round", "elbo"}, {idx, s.elbo_trace}));
  std::vector<double> mu(s.mu_c.data(), s.mu_c.data() + s.mu_c.size());
  w.write(base + "inducing.csv", format_table({"time", "mean"}, {s.basis.inducing, mu}));
  w.write(base + "inducing_cov.csv", format_matrix(s.sigma_c));
  w.write_json(base + "state.json", {{"alpha", s.alpha},
                                     {"beta", s.beta},
                                     {"mean_lambda", s.mean_lambda()},
                                     {"jitter", s.basis.prior.jitter},
                                     {"rounds", s.rounds},
                                     {"converged", s.converged},
                                     {"elbo", s.elbo_trace.back()},
                                     {"kernel", s.kernel.parameters()},
                                     {"kernel_trace", kernel_trace_json(s.kernel_trace)}});
}

inline void save_gibbs_dimension(BundleWriter& w, const std::string& base, const DimensionFit& d) {
  const auto& c = *d.chain;
  w.write(base + "samples/lambda.csv", format_table({"lambda", "latent_count"}, {c.lambda, c.latent_count}));
  w.write(base + "samples/grid.csv", format_table({"time"}, {c.grid}));
  w.write(base + "samples/phi_grid.csv", format_matrix(c.phi_grid, "g"));
  Eigen::MatrixXd snaps(static_cast<Eigen::Index>(c.snapshots.size()),
                        c.snapshots.empty() ? 2 : 2 + c.snapshots.front().beta.size());
  for (std::size_t i = 0; i < c.snapshots.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    snaps(r, 0) = c.snapshots[i].lambda;
    snaps(r, 1) = static_cast<double>(c.snapshots[i].kernel_index);
    snaps.row(r).tail(c.snapshots[i].beta.size()) = c.snapshots[i].beta.transpose();
  }
  w.write(base + "samples/snapshots.csv", format_matrix(snaps, "s"));
  std::vector<double> lags(c.lambda_autocorr.size());
  for (std::size_t i = 0; i < lags.size(); ++i) lags[i] = static_cast<double>(i);
  w.write(base + "lambda_autocorr.csv", format_table({"lag", "autocorrelation"}, {lags, c.lambda_autocorr}));
  w.write_json(base + "state.json", {{"iterations", c.iterations},
                                     {"burn_in", c.burn_in},
                                     {"thin", c.thin},
                                     {"seed", c.seed},
                                     {"horizon", c.horizon},
                                     {"proposed", c.proposed},
                                     {"accepted", c.accepted},
                                     {"mean_lambda", mean_of(c.lambda)},
                                     {"kernel_trace", kernel_trace_json(c.kernel_trace)}});
}

}  // namespace detail

// Reporting grid with plug-in intensity and phi posterior mean +- 2 sd per dimension.
[[nodiscard]] inline std::string format_intensity_grid(const ModelFit& fit, const EventSequence& ev,
                                                       std::size_t points = 500) {
  const auto grid = trapezoid_grid(0.0, ev.window, points);
  std::vector<std::string> header{"time"};
  std::vector<std::vector<double>> cols{grid.points};
  for (const auto& d : fit.dims) {
    if (!d.predictive) continue;
    const std::string sfx = fit.dims.size() > 1 ? "_" + std::to_string(d.dim) : "";
    const auto lam = d.predictive->intensity(grid.points, ev);
    const auto phi = d.predictive->phi(grid.points, ev);
    std::vector<double> mean(phi.mean.data(), phi.mean.data() + phi.mean.size()), lo, hi;
    for (Eigen::Index i = 0; i < phi.mean.size(); ++i) {
      const double sd = std::sqrt(phi.var(i));
      lo.push_back(phi.mean(i) - 2.0 * sd);
      hi.push_back(phi.mean(i) + 2.0 * sd);
    }
    for (const auto* h : {"intensity", "phi_mean", "phi_lo", "phi_hi"}) header.push_back(h + sfx);
    cols.push_back(lam);
    cols.push_back(mean);
    cols.push_back(lo);
    cols.push_back(hi);
  }
  return format_table(header, cols);
}

// Writes events, config echo, per-dimension state and a manifest. On failure the
// manifest is still written, marked incomplete, and the error propagates.
inline Manifest save_fit(const ModelFit& fit, const RunConfig& config, const EventSequence& training,
                         const fs::path& dir) {
  BundleWriter w(dir, "fit");
  try {
    w.write("events.csv", format_events(training));
    w.write("config.json", format_config(config));
    Json dims = Json::array();
    for (const auto& d : fit.dims) {
      const std::string base = "dim" + std::to_string(d.dim) + "/";
      Json s = {{"dim", d.dim}, {"events", d.observed.size()}, {"sources", d.spec.sources}};
      if (d.vi) {
        detail::save_vi_dimension(w, base, d);
        s["mean_lambda"] = d.vi->mean_lambda();
        s["elbo"] = d.vi->elbo_trace.back();
        s["rounds"] = d.vi->rounds;
        s["converged"] = d.vi->converged;
      }
      if (d.chain) {
        detail::save_gibbs_dimension(w, base, d);
        s["mean_lambda"] = mean_of(d.chain->lambda);
        s["samples"] = d.chain->sample_count();
      }
      dims.push_back(s);
    }
    w.write_json("summary.json", {{"method", to_string(fit.method)}, {"window", fit.window},
                                  {"dims", fit.model.dims}, {"per_dimension", dims}});
    w.write("intensity.csv", format_intensity_grid(fit, training));
  } catch (...) {
    w.finish(false);
    throw;
  }
  return w.finish(true);
}

struct LoadedFit {
  RunConfig config;
  EventSequence training;
  ModelFit fit;
};

// Rebuilds the predictive of every dimension. VI tilts and latent rates are recomputed
// from the stored (alpha, beta, mu_c, Sigma_c) and kernel.
[[nodiscard]] inline LoadedFit load_fit(const fs::path& dir) {
  const auto manifest = load_manifest(dir);
  require<IoError>(manifest.kind == "fit", dir.string() + " is not a fit bundle");
  if (!manifest.complete) throw IoError(dir.string() + " holds a partial fit (manifest marked incomplete)");
  LoadedFit out;
  try {
    out.config = load_config(dir / "config.json");
  } catch (const ValidationError& e) {
    throw IoError(std::string("stored config unreadable: ") + e.what());
  }
  const auto model = out.config.model();
  out.training = load_events(dir / "events.csv", std::nullopt, model.dims > 1 ? model.dims : 0);
  const Json summary = load_json(dir / "summary.json");
  out.fit.method = parse_method(summary.at("method").get<std::string>());
  out.fit.window = summary.at("window").get<double>();
  out.fit.model = model;
  for (int r = 0; r < model.dims; ++r) {
    const fs::path base = dir / ("dim" + std::to_string(r));
    const auto kernel = model.kernel_for(r, out.training);
    DimensionFit d(r, HistorySpec::for_dimension(model, r), kernel, out.training.times_of_type(r));
    const Json state = load_json(base / "state.json");
    if (out.fit.method == Method::vi) {
      ViConfig cfg = out.config.vi;
      cfg.jitter = state.at("jitter").get<double>();
      const Table ind = load_table(base / "inducing.csv");
      cfg.inducing = ind.column("time");
      d.problem = make_problem(d.observed, out.training.window, model.lambda_prior[static_cast<std::size_t>(r)], cfg);
      const auto params = state.at("kernel").get<std::vector<double>>();
      auto s = initial_state(*d.problem, kernel.with_parameters(params));
      s.alpha = state.at("alpha").get<double>();
      s.beta = state.at("beta").get<double>();
      const auto mu = ind.column("mean");
      s.mu_c = Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(mu.size()));
      s.sigma_c = load_table(base / "inducing_cov.csv").matrix();
      refresh_marginals(*d.problem, s);
      update_q_pg(*d.problem, s);
      update_q_latent(*d.problem, s);
      s.elbo_trace = load_table(base / "elbo_trace.csv").column("elbo");
      s.kernel_trace = state.at("kernel_trace").get<std::vector<std::vector<double>>>();
      s.rounds = state.at("rounds").get<std::size_t>();
      s.converged = state.at("converged").get<bool>();
      d.vi = std::move(s);
      d.predictive = std::make_shared<VariationalPredictive>(d.vi->posterior(), d.vi->alpha, d.vi->beta, d.spec);
    } else {
      ChainOutput c;
      const Table lam = load_table(base / "samples" / "lambda.csv");
      c.lambda = lam.column("lambda");
      c.latent_count = lam.column("latent_count");
      c.grid = load_table(base / "samples" / "grid.csv").column("time");
      c.phi_grid = load_table(base / "samples" / "phi_grid.csv").matrix();
      const Eigen::MatrixXd snaps = load_table(base / "samples" / "snapshots.csv").matrix();
      for (Eigen::Index i = 0; i < snaps.rows(); ++i) {
        c.snapshots.push_back({snaps(i, 0), snaps.row(i).tail(snaps.cols() - 2).transpose(),
                               static_cast<std::size_t>(snaps(i, 1))});
      }
      c.lambda_autocorr = load_table(base / "lambda_autocorr.csv").column("autocorrelation");
      c.kernel_trace = state.at("kernel_trace").get<std::vector<std::vector<double>>>();
      c.iterations = state.at("iterations").get<std::size_t>();
      c.burn_in = state.at("burn_in").get<std::size_t>();
      c.thin = state.at("thin").get<std::size_t>();
      c.seed = state.at("seed").get<std::uint64_t>();
      c.horizon = state.at("horizon").get<double>();
      c.proposed = state.at("proposed").get<std::size_t>();
      c.accepted = state.at("accepted").get<std::size_t>();
      d.chain = std::move(c);
      if (!d.chain->snapshots.empty()) d.predictive = std::make_shared<ChainPredictive>(kernel, d.spec, *d.chain);
    }
    out.fit.dims.push_back(std::move(d));
  }
  return out;
}

}  // namespace nhgps
