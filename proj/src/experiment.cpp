#include "pbrf/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include <spdlog/spdlog.h>

#include "pbrf/error.hpp"
#include "pbrf/io.hpp"
#include "pbrf/util.hpp"

namespace pbrf {

using nlohmann::json;

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::decompose: return "decompose";
    case Mode::correlate: return "correlate";
    case Mode::sweep: return "sweep";
    case Mode::mislabel: return "mislabel";
    case Mode::influence_scores: return "influence-scores";
  }
  return "unknown";
}

namespace {

constexpr std::uint64_t kMaxSeed = (1ULL << 53) - 1;  // exactly representable in any JSON reader

[[noreturn]] void fail(const std::string& field, const std::string& msg) {
  throw Error(ErrorKind::configuration, field + ": " + msg);
}

// Reads one JSON object, records the resolved value of every key it visits and
// rejects keys nobody asked for.
class Block {
 public:
  Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "config" : path_, "must be an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    return has(key) ? &j_.at(key) : nullptr;
  }

  double number(const std::string& key, std::optional<double> def = std::nullopt) {
    const json* v = raw(key);
    double x;
    if (!v) {
      if (!def) fail(field(key), "is required");
      x = *def;
    } else {
      if (!v->is_number()) fail(field(key), "must be a number");
      x = v->get<double>();
      if (!std::isfinite(x)) fail(field(key), "must be finite");
    }
    out[key] = x;
    return x;
  }

  std::int64_t integer(const std::string& key, std::optional<std::int64_t> def = std::nullopt) {
    const json* v = raw(key);
    std::int64_t x;
    if (!v) {
      if (!def) fail(field(key), "is required");
      x = *def;
    } else {
      if (!v->is_number_integer() && !(v->is_number_float() && std::floor(v->get<double>()) == v->get<double>()))
        fail(field(key), "must be an integer");
      x = v->is_number_integer() ? v->get<std::int64_t>() : static_cast<std::int64_t>(v->get<double>());
    }
    out[key] = x;
    return x;
  }

  std::uint64_t seed(const std::string& key) {
    const json* v = raw(key);
    if (!v) fail(field(key), "is required (every random choice needs a named seed)");
    if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<std::int64_t>() < 0))
      fail(field(key), "must be a nonnegative integer");
    const auto x = v->get<std::uint64_t>();
    if (x > kMaxSeed) fail(field(key), "must be at most 2^53 - 1");
    out[key] = x;
    return x;
  }

  bool boolean(const std::string& key, bool def) {
    const json* v = raw(key);
    bool x = def;
    if (v) {
      if (!v->is_boolean()) fail(field(key), "must be true or false");
      x = v->get<bool>();
    }
    out[key] = x;
    return x;
  }

  std::string string(const std::string& key, std::optional<std::string> def = std::nullopt) {
    const json* v = raw(key);
    std::string x;
    if (!v) {
      if (!def) fail(field(key), "is required");
      x = *def;
    } else {
      if (!v->is_string()) fail(field(key), "must be a string");
      x = v->get<std::string>();
    }
    out[key] = x;
    return x;
  }

  std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> def = std::nullopt) {
    const json* v = raw(key);
    std::vector<double> xs;
    if (!v) {
      if (!def) fail(field(key), "is required");
      xs = *def;
    } else {
      if (!v->is_array()) fail(field(key), "must be an array of numbers");
      for (const auto& e : *v) {
        if (!e.is_number()) fail(field(key), "must be an array of numbers");
        xs.push_back(e.get<double>());
      }
    }
    out[key] = xs;
    return xs;
  }

  std::vector<std::string> strings(const std::string& key, std::vector<std::string> def) {
    const json* v = raw(key);
    std::vector<std::string> xs = std::move(def);
    if (v) {
      xs.clear();
      if (!v->is_array()) fail(field(key), "must be an array of strings");
      for (const auto& e : *v) {
        if (!e.is_string()) fail(field(key), "must be an array of strings");
        xs.push_back(e.get<std::string>());
      }
    }
    out[key] = xs;
    return xs;
  }

  Block child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Block(has(key) ? j_.at(key) : empty, field(key));
  }

  void put(const std::string& key, const Block& b) { out[key] = b.out; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(field(k), "unknown field");
  }

  json out = json::object();

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class Fn>
auto parse_enum(const std::string& field, Fn fn, const std::string& value) {
  try {
    return fn(value);
  } catch (const Error& e) {
    fail(field, "unsupported value '" + value + "'");
  }
}

void require(bool ok, const std::string& field, const std::string& msg) {
  if (!ok) fail(field, msg);
}

Mode mode_from_string(const std::string& name) {
  for (auto m : {Mode::decompose, Mode::correlate, Mode::sweep, Mode::mislabel, Mode::influence_scores})
    if (name == to_string(m)) return m;
  throw Error(ErrorKind::configuration, "unknown mode");
}

}  // namespace

ExperimentConfig parse_config(const json& in) {
  ExperimentConfig cfg;
  Block root(in, "");

  // dataset
  Block ds = root.child("dataset");
  const std::string source = ds.string("source");
  require(source == "synth_classification" || source == "synth_regression" || source == "csv", ds.field("source"),
          "must be synth_classification, synth_regression or csv");
  Task task = Task::regression;
  int classes = 0;
  std::int64_t features = -1;
  const std::int64_t test_count = ds.integer("test_count", 0);
  require(test_count >= 0, ds.field("test_count"), "must be nonnegative");
  if (source == "csv") {
    Block csv = ds.child("csv");
    csv.string("path");
    csv.strings("features", {});
    const auto targets = csv.strings("targets", {});
    require(!targets.empty(), csv.field("targets"), "needs at least one column");
    const std::string t = csv.string("task");
    require(t == "regression" || t == "classification", csv.field("task"), "must be regression or classification");
    task = t == "classification" ? Task::classification : Task::regression;
    classes = static_cast<int>(csv.integer("num_classes", 0));
    require(classes >= 0, csv.field("num_classes"), "must be nonnegative");
    csv.string("test_path", "");
    csv.finish();
    ds.put("csv", csv);
  } else {
    Block syn = ds.child("synth");
    const auto n = syn.integer("n");
    require(n >= 1, syn.field("n"), "must be >= 1");
    features = syn.integer("p");
    require(features >= 1, syn.field("p"), "must be >= 1");
    syn.seed("seed");
    if (source == "synth_classification") {
      task = Task::classification;
      classes = static_cast<int>(syn.integer("classes"));
      require(classes >= 1, syn.field("classes"), "must be >= 1");
      syn.number("separation", 3.0);
    } else {
      const double noise = syn.number("noise", 0.1);
      require(noise >= 0.0, syn.field("noise"), "must be nonnegative");
    }
    syn.finish();
    ds.put("synth", syn);
  }
  ds.boolean("normalize", true);
  if (ds.has("subsample")) {
    Block sub = ds.child("subsample");
    const double f = sub.number("fraction");
    require(f > 0.0 && f <= 1.0, sub.field("fraction"), "must lie in (0, 1]");
    sub.seed("seed");
    sub.finish();
    ds.put("subsample", sub);
  } else {
    ds.raw("subsample");
    ds.out["subsample"] = nullptr;
  }
  if (ds.has("corruption")) {
    require(task == Task::classification, ds.field("corruption"), "label corruption needs a classification dataset");
    Block cor = ds.child("corruption");
    const double f = cor.number("fraction");
    require(f >= 0.0 && f <= 1.0, cor.field("fraction"), "must lie in [0, 1]");
    cor.seed("seed");
    cor.finish();
    ds.put("corruption", cor);
  } else {
    ds.raw("corruption");
    ds.out["corruption"] = nullptr;
  }
  ds.finish();
  root.put("dataset", ds);

  // model
  Block model = root.child("model");
  {
    const json* w = model.raw("layer_widths");
    if (!w || !w->is_array()) fail(model.field("layer_widths"), "is required as an array of positive integers");
    for (const auto& e : *w) {
      if (!e.is_number_integer() || e.get<std::int64_t>() < 1 || e.get<std::int64_t>() > 1000000)
        fail(model.field("layer_widths"), "entries must be positive integers");
      cfg.spec.layer_widths.push_back(e.get<int>());
    }
    require(cfg.spec.layer_widths.size() >= 2, model.field("layer_widths"), "needs at least input and output widths");
    model.out["layer_widths"] = cfg.spec.layer_widths;
    const std::size_t hidden = cfg.spec.layer_widths.size() - 2;
    const json* acts = model.raw("activations");
    std::vector<std::string> names;
    if (!acts) {
      names.assign(hidden, "tanh");
    } else if (acts->is_string()) {
      names.assign(hidden, acts->get<std::string>());
    } else if (acts->is_array()) {
      for (const auto& e : *acts) {
        if (!e.is_string()) fail(model.field("activations"), "must be a string or an array of strings");
        names.push_back(e.get<std::string>());
      }
    } else {
      fail(model.field("activations"), "must be a string or an array of strings");
    }
    require(names.size() == hidden, model.field("activations"), "needs one entry per hidden layer");
    for (const auto& n : names)
      cfg.spec.activations.push_back(parse_enum(model.field("activations"), activation_from_string, n));
    model.out["activations"] = names;
    cfg.spec.loss = parse_enum(model.field("loss"), loss_kind_from_string, model.string("loss"));
    cfg.spec.l2_strength = model.number("l2", 0.0);
    require(cfg.spec.l2_strength >= 0.0, model.field("l2"), "must be nonnegative");
    try {
      cfg.spec.validate();
    } catch (const Error& e) {
      fail("model", e.what());
    }
  }
  model.finish();
  root.put("model", model);
  if (features >= 0)
    require(cfg.spec.input_dim() == features, "model.layer_widths",
            "input width must equal dataset.synth.p (" + std::to_string(features) + ")");
  if (task == Task::regression)
    require(cfg.spec.loss == LossKind::squared_error, "model.loss", "regression data needs squared_error");
  if (cfg.spec.loss == LossKind::softmax_cross_entropy && classes > 0)
    require(cfg.spec.output_dim() == classes, "model.layer_widths", "output width must equal the number of classes");
  if (cfg.spec.loss == LossKind::binary_cross_entropy) {
    require(cfg.spec.output_dim() == 1, "model.layer_widths", "binary_cross_entropy needs one output");
    require(classes == 0 || classes == 2, "model.loss", "binary_cross_entropy needs two classes");
  }
  if (cfg.spec.loss == LossKind::squared_error && task == Task::classification && classes > 0)
    require(cfg.spec.output_dim() == classes, "model.layer_widths", "one-hot targets need one output per class");

  // train
  Block tr = root.child("train");
  cfg.train.optimizer = parse_enum(tr.field("optimizer"), optimizer_from_string, tr.string("optimizer"));
  cfg.train.learning_rate = tr.number("learning_rate");
  cfg.train.momentum = tr.number("momentum", 0.0);
  {
    const json* b = tr.raw("batch_size");
    if (!b || (b->is_string() && b->get<std::string>() == "full")) {
      cfg.train.batch_size = 0;
      tr.out["batch_size"] = "full";
    } else if (b->is_number_integer() && b->get<std::int64_t>() >= 1) {
      cfg.train.batch_size = b->get<int>();
      tr.out["batch_size"] = cfg.train.batch_size;
    } else {
      fail(tr.field("batch_size"), "must be a positive integer or \"full\"");
    }
  }
  cfg.train.epochs = static_cast<int>(tr.integer("epochs"));
  cfg.train.seed = tr.seed("seed");
  cfg.init_seed = tr.seed("init_seed");
  cfg.train.grad_tol = tr.number("grad_tol", 0.0);
  {
    const json* d = tr.raw("lr_decay");
    json outd = json::array();
    if (d) {
      if (!d->is_array()) fail(tr.field("lr_decay"), "must be an array of {epoch, factor}");
      for (std::size_t i = 0; i < d->size(); ++i) {
        Block m((*d)[i], tr.field("lr_decay") + "[" + std::to_string(i) + "]");
        LrMilestone ms;
        ms.epoch = static_cast<int>(m.integer("epoch"));
        ms.factor = m.number("factor");
        m.finish();
        cfg.train.lr_decay.push_back(ms);
        outd.push_back(m.out);
      }
    }
    tr.out["lr_decay"] = outd;
  }
  cfg.protocol.retrain_fraction = tr.number("retrain_fraction", 0.5);
  require(cfg.protocol.retrain_fraction > 0.0, tr.field("retrain_fraction"), "must be positive");
  cfg.protocol.bregman_lr_factor = tr.number("bregman_lr_factor", 0.1);
  require(cfg.protocol.bregman_lr_factor > 0.0, tr.field("bregman_lr_factor"), "must be positive");
  cfg.protocol.retrain_seed = tr.seed("retrain_seed");
  try {
    cfg.train.validate();
  } catch (const Error& e) {
    fail("train", e.what());
  }
  tr.finish();
  root.put("train", tr);

  // influence
  Block inf = root.child("influence");
  cfg.influence.curvature = parse_enum(inf.field("curvature"), curvature_from_string, inf.string("curvature", "gnh"));
  cfg.influence.solver = parse_enum(inf.field("solver"), solver_from_string, inf.string("solver", "cg"));
  cfg.influence.damping = inf.number("damping", 1e-3);
  require(cfg.influence.damping >= 0.0, inf.field("damping"), "must be nonnegative");
  if (const json* e = inf.raw("epsilon")) {
    if (!e->is_number()) fail(inf.field("epsilon"), "must be a number or null");
    cfg.influence.epsilon = e->get<double>();
    inf.out["epsilon"] = *cfg.influence.epsilon;
  } else {
    inf.out["epsilon"] = nullptr;
  }
  cfg.influence.cg_max_iter = static_cast<int>(inf.integer("cg_max_iter", 0));
  require(cfg.influence.cg_max_iter >= 0, inf.field("cg_max_iter"), "must be nonnegative");
  cfg.influence.cg_tol = inf.number("cg_tol", 1e-10);
  require(cfg.influence.cg_tol > 0.0, inf.field("cg_tol"), "must be positive");
  cfg.influence.exact_cap = inf.integer("exact_cap", 2000);
  require(cfg.influence.exact_cap >= 1, inf.field("exact_cap"), "must be positive");
  {
    Block li = inf.child("lissa");
    const bool lissa = cfg.influence.solver == SolverKind::lissa;
    cfg.influence.lissa.depth = static_cast<int>(li.integer("depth", 5000));
    require(cfg.influence.lissa.depth >= 0, li.field("depth"), "must be nonnegative");
    cfg.influence.lissa.repeats = static_cast<int>(li.integer("repeats", 1));
    require(cfg.influence.lissa.repeats >= 1, li.field("repeats"), "must be >= 1");
    cfg.influence.lissa.batch_size = static_cast<int>(li.integer("batch_size", 0));
    require(cfg.influence.lissa.batch_size >= 0, li.field("batch_size"), "must be nonnegative (0 = full data)");
    const json* sc = li.raw("scale");
    if (!sc || (sc->is_string() && sc->get<std::string>() == "auto")) {
      cfg.lissa_auto = true;
      li.out["scale"] = "auto";
    } else if (sc->is_number() && sc->get<double>() > 0.0) {
      cfg.influence.lissa.scale = sc->get<double>();
      li.out["scale"] = cfg.influence.lissa.scale;
    } else {
      fail(li.field("scale"), "must be a positive number or \"auto\"");
    }
    cfg.lissa_grid = li.numbers("grid", default_lissa_grid());
    require(!cfg.lissa_grid.empty(), li.field("grid"), "must not be empty");
    for (double s : cfg.lissa_grid) require(s > 0.0, li.field("grid"), "entries must be positive");
    cfg.lissa_tolerance = li.number("tolerance", 1e-3);
    require(cfg.lissa_tolerance > 0.0, li.field("tolerance"), "must be positive");
    if (lissa) {
      cfg.influence.lissa.seed = li.seed("seed");
    } else if (li.has("seed")) {
      cfg.influence.lissa.seed = li.seed("seed");
    } else {
      li.raw("seed");
    }
    li.finish();
    inf.put("lissa", li);
  }
  inf.finish();
  root.put("influence", inf);
  cfg.protocol.damping = cfg.influence.damping;
  cfg.protocol.epsilon = cfg.influence.epsilon;
  try {
    cfg.influence.validate();
  } catch (const Error& e) {
    fail("influence", e.what());
  }

  // experiment
  Block ex = root.child("experiment");
  cfg.mode = parse_enum(ex.field("mode"), mode_from_string, ex.string("mode"));
  const bool removal_mode = cfg.mode == Mode::decompose || cfg.mode == Mode::correlate || cfg.mode == Mode::sweep;
  const auto trials = ex.integer("trials", 20);
  require(trials >= 1, ex.field("trials"), "must be >= 1");
  const auto per_trial = ex.integer("removals_per_trial", 1);
  require(per_trial >= 0, ex.field("removals_per_trial"), "must be nonnegative");
  if (removal_mode) {
    ex.seed("removal_seed");
  } else if (ex.has("removal_seed")) {
    ex.seed("removal_seed");
  } else {
    ex.raw("removal_seed");
  }
  const bool needs_test = cfg.mode == Mode::correlate || cfg.mode == Mode::influence_scores;
  if (ex.has("test_ids") && ex.has("test_points")) fail(ex.field("test_ids"), "give either test_ids or test_points");
  if (ex.has("test_ids")) {
    const json* ids = ex.raw("test_ids");
    if (!ids->is_array() || ids->empty()) fail(ex.field("test_ids"), "must be a nonempty array of ids");
    std::vector<std::int64_t> v;
    for (const auto& e : *ids) {
      if (!e.is_number_integer() || e.get<std::int64_t>() < 0) fail(ex.field("test_ids"), "ids must be nonnegative integers");
      v.push_back(e.get<std::int64_t>());
    }
    ex.out["test_ids"] = v;
    ex.raw("test_points");
  } else if (ex.has("test_points")) {
    Block tp = ex.child("test_points");
    const auto count = tp.integer("count");
    require(count >= 1, tp.field("count"), "must be >= 1");
    tp.seed("seed");
    tp.finish();
    ex.put("test_points", tp);
    ex.raw("test_ids");
  } else {
    if (needs_test) fail(ex.field("test_ids"), "this mode needs test_ids or test_points");
    ex.raw("test_ids");
    ex.raw("test_points");
  }
  if (needs_test) {
    const bool has_test_split = test_count > 0 || (ds.out.contains("csv") && !ds.out["csv"]["test_path"].get<std::string>().empty());
    require(has_test_split, "dataset.test_count", "this mode needs a test split");
  }
  if (cfg.mode == Mode::sweep) {
    Block sw = ex.child("sweep");
    const auto factor = parse_enum(sw.field("factor"), sweep_factor_from_string, sw.string("factor"));
    const auto grid = sw.numbers("grid");
    require(!grid.empty(), sw.field("grid"), "must not be empty");
    if (factor == SweepFactor::width || factor == SweepFactor::depth)
      require(cfg.spec.layer_widths.size() >= 3, "model.layer_widths", "width and depth sweeps need a hidden layer");
    sw.finish();
    ex.put("sweep", sw);
  } else {
    ex.raw("sweep");
  }
  if (cfg.mode == Mode::mislabel) {
    require(ds.out.contains("corruption") && !ds.out["corruption"].is_null(), "dataset.corruption",
            "mislabel mode needs a corruption block");
    Block ml = ex.child("mislabel");
    parse_enum(ml.field("scorer"), mislabel_scorer_from_string, ml.string("scorer", "influence_self"));
    const auto fr = ml.numbers("fractions", default_inspection_fractions());
    for (double q : fr) require(q >= 0.0 && q <= 1.0, ml.field("fractions"), "entries must lie in [0, 1]");
    ml.finish();
    ex.put("mislabel", ml);
  } else {
    ex.raw("mislabel");
  }
  if (cfg.mode == Mode::correlate) {
    const auto names = ex.strings("baselines", {"cold", "warm", "pbrf", "two_stage_loo"});
    require(!names.empty(), ex.field("baselines"), "must not be empty");
    for (const auto& n : names)
      require(n == "cold" || n == "warm" || n == "pbrf" || n == "two_stage_loo", ex.field("baselines"),
              "unsupported baseline '" + n + "'");
    ex.boolean("sanity", false);
  } else {
    ex.raw("baselines");
    ex.raw("sanity");
  }
  ex.finish();
  root.put("experiment", ex);

  Block outb = root.child("output");
  cfg.output_dir = outb.string("dir", "out");
  outb.boolean("save_params", true);
  outb.finish();
  root.put("output", outb);

  root.finish();
  cfg.resolved = root.out;
  return cfg;
}

json read_config_json(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::configuration, std::string("config: ") + e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::configuration, "config: not valid JSON: " + std::string(e.what()));
  }
  if (j.is_object() && j.contains("software") && j.contains("config")) return j.at("config");
  return j;
}

namespace {

const std::vector<std::vector<std::string>>& seed_paths() {
  static const std::vector<std::vector<std::string>> paths = {
      {"dataset", "synth", "seed"},    {"dataset", "subsample", "seed"},
      {"dataset", "corruption", "seed"}, {"train", "seed"},
      {"train", "init_seed"},          {"train", "retrain_seed"},
      {"influence", "lissa", "seed"},  {"experiment", "removal_seed"},
      {"experiment", "test_points", "seed"}};
  return paths;
}

std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (const auto& p : parts) s += (s.empty() ? "" : ".") + p;
  return s;
}

}  // namespace

void apply_seed_override(json& config, std::uint64_t seed) {
  for (const auto& path : seed_paths()) {
    json* node = &config;
    bool ok = node->is_object();
    for (std::size_t i = 0; ok && i + 1 < path.size(); ++i) {
      ok = node->contains(path[i]) && (*node)[path[i]].is_object();
      if (ok) node = &(*node)[path[i]];
    }
    if (!ok) continue;
    const std::string name = join(path);
    // Only add seeds the block can use; top-level train seeds always exist.
    const bool always = path.front() == "train" || path[1] == "synth";
    if (!node->contains(path.back()) && !always) continue;
    (*node)[path.back()] = fnv1a64_mix(fnv1a64(name), seed) & kMaxSeed;
  }
}

json collect_seeds(const json& resolved) {
  json seeds = json::object();
  for (const auto& path : seed_paths()) {
    const json* node = &resolved;
    bool ok = true;
    for (const auto& p : path) {
      if (!node->is_object() || !node->contains(p) || (*node)[p].is_null()) {
        ok = false;
        break;
      }
      node = &(*node)[p];
    }
    if (ok) seeds[join(path)] = *node;
  }
  return seeds;
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
  const json& ds = cfg.resolved.at("dataset");
  const std::string source = ds.at("source");
  const auto test_count = ds.at("test_count").get<int>();
  PreparedData out;
  Dataset all;
  if (source == "csv") {
    const json& c = ds.at("csv");
    CsvSchema schema;
    schema.feature_columns = c.at("features").get<std::vector<std::string>>();
    schema.target_columns = c.at("targets").get<std::vector<std::string>>();
    schema.task = c.at("task") == "classification" ? Task::classification : Task::regression;
    schema.num_classes = c.at("num_classes").get<int>();
    all = load_csv(c.at("path"), schema);
    const std::string test_path = c.at("test_path");
    if (!test_path.empty()) {
      if (schema.task == Task::classification && schema.num_classes == 0) schema.num_classes = all.num_classes();
      out.test = load_csv(test_path, schema);
    }
  } else {
    const json& s = ds.at("synth");
    const int n = s.at("n").get<int>() + test_count;
    if (source == "synth_classification")
      all = synth_classification(n, s.at("p"), s.at("classes"), s.at("seed"), s.at("separation"));
    else
      all = synth_regression(n, s.at("p"), s.at("seed"), s.at("noise"));
  }
  if (test_count > 0) {
    if (test_count >= all.size()) throw Error(ErrorKind::insufficient_data, "test_count leaves no training rows");
    auto [tr, te] = split_tail(all, test_count);
    out.train = std::move(tr);
    if (out.test.empty()) out.test = std::move(te);
  } else {
    out.train = std::move(all);
  }
  if (!ds.at("subsample").is_null())
    out.train = subsample(out.train, ds.at("subsample").at("fraction"), ds.at("subsample").at("seed"));
  if (ds.at("normalize").get<bool>()) {
    auto [tr, norm] = normalize(out.train);
    out.train = std::move(tr);
    if (!out.test.empty()) out.test = apply_normalization(out.test, norm);
  }
  if (!ds.at("corruption").is_null()) {
    auto [tr, rec] = corrupt_labels(out.train, ds.at("corruption").at("fraction"), ds.at("corruption").at("seed"));
    out.train = std::move(tr);
    out.corruption = std::move(rec);
  }
  if (out.train.input_dim() != cfg.spec.input_dim())
    throw Error(ErrorKind::shape, "dataset has " + std::to_string(out.train.input_dim()) +
                                      " features but the model expects " + std::to_string(cfg.spec.input_dim()));
  return out;
}

ExperimentSetup make_setup(const ExperimentConfig& cfg, const PreparedData& data, int jobs) {
  ExperimentSetup s;
  s.spec = cfg.spec;
  s.train = data.train;
  s.test = data.test;
  s.train_config = cfg.train;
  s.init_seed = cfg.init_seed;
  s.protocol = cfg.protocol;
  s.influence = cfg.influence;
  s.influence.jobs = 1;
  const json& ex = cfg.resolved.at("experiment");
  s.trials = ex.at("trials").get<int>();
  s.removals_per_trial = ex.at("removals_per_trial").get<int>();
  if (ex.contains("removal_seed") && !ex.at("removal_seed").is_null()) s.removal_seed = ex.at("removal_seed");
  s.jobs = std::max(1, jobs);
  return s;
}

namespace {

std::vector<std::int64_t> select_test_ids(const ExperimentConfig& cfg, const Dataset& test) {
  const json& ex = cfg.resolved.at("experiment");
  if (ex.contains("test_ids")) {
    auto ids = ex.at("test_ids").get<std::vector<std::int64_t>>();
    for (auto id : ids) test.row_of(id);
    return ids;
  }
  const auto count = ex.at("test_points").at("count").get<std::int64_t>();
  if (count > test.size()) throw Error(ErrorKind::insufficient_data, "test set has fewer rows than test_points.count");
  std::vector<std::int64_t> ids = test.ids();
  std::mt19937_64 rng(ex.at("test_points").at("seed").get<std::uint64_t>());
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(static_cast<std::size_t>(count));
  std::sort(ids.begin(), ids.end());
  return ids;
}

class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::string dir) : dir_(std::move(dir)) {}

  void text(const std::string& rel, const std::string& content) {
    write_file((std::filesystem::path(dir_) / rel).string(), content);
    files_.insert(rel);
  }
  void jsonfile(const std::string& rel, const json& j) { text(rel, j.dump(2) + "\n"); }
  void params(const std::string& rel, const ParamVector& p, const NetworkSpec& spec) {
    save_params((std::filesystem::path(dir_) / rel).string(), p, spec);
    files_.insert(rel);
  }

  std::vector<std::string> files() const { return {files_.begin(), files_.end()}; }
  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  std::set<std::string> files_;
};

json manifest_json(const ExperimentConfig& cfg, const json& extra, const ArtifactWriter& w) {
  json m = {{"software", {{"name", "pbrf"}, {"version", PBRF_VERSION}}},
            {"config", cfg.resolved},
            {"seeds", collect_seeds(cfg.resolved)},
            {"spec_hash", cfg.spec.hash()},
            {"mode", to_string(cfg.mode)}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  json digests = json::object();
  for (const auto& f : w.files()) {
    const std::string bytes = read_file((std::filesystem::path(w.dir()) / f).string());
    digests[f] = hex64(fnv1a64(bytes));
  }
  m["outputs"] = digests;
  return m;
}

LissaTuning tune_for(const ExperimentConfig& cfg, const BaseRun& base, const Dataset& train, int jobs) {
  const CurvatureOperator op =
      CurvatureOperator::for_model(base.params, cfg.spec, train, cfg.influence.curvature, cfg.influence.damping);
  std::mt19937_64 rng(cfg.influence.lissa.seed);
  const auto row = static_cast<int>(std::uniform_int_distribution<Eigen::Index>(0, train.size() - 1)(rng));
  const std::vector<int> rows = {row};
  const auto cache = kernel::forward(cfg.spec, base.params, train.batch_inputs(rows));
  const ParamVector probe = kernel::vjp(
      cfg.spec, base.params, cache,
      loss_output_grads(cfg.spec.loss, cache.outputs(), train.batch_targets(rows, cfg.spec.loss)));
  return tune_lissa_scale(op, probe, cfg.influence.lissa, cfg.lissa_grid, cfg.lissa_tolerance, jobs);
}

std::string tuning_csv(const LissaTuning& t) {
  std::string out = "scale,diverged,rel_error,residual_norm,chosen\n";
  for (const auto& tr : t.trials)
    out += format_double(tr.scale) + "," + (tr.diverged ? "1" : "0") + "," + format_double(tr.rel_error) + "," +
           format_double(tr.residual_norm) + "," + (tr.scale == t.scale ? "1" : "0") + "\n";
  return out;
}

json tuning_json(const LissaTuning& t) {
  json trials = json::array();
  for (const auto& tr : t.trials)
    trials.push_back({{"scale", tr.scale}, {"diverged", tr.diverged},
                      {"rel_error", tr.diverged ? json(nullptr) : json(tr.rel_error)}});
  return {{"chosen_scale", t.scale}, {"trials", trials}};
}

void run_mode(const ExperimentConfig& cfg_in, const RunOptions& options, ArtifactWriter& w, json& extra) {
  ExperimentConfig cfg = cfg_in;
  const int jobs = std::max(1, options.jobs);
  const json& ex = cfg.resolved.at("experiment");
  const bool save = cfg.resolved.at("output").at("save_params").get<bool>();

  spdlog::info("preparing data");
  const PreparedData data = prepare_data(cfg);
  spdlog::info("training base network: {} parameters, {} examples", cfg.spec.param_count(), data.train.size());
  const BaseRun base = train_base(cfg.spec, data.train, cfg.train, cfg.init_seed);
  if (save) {
    w.params("params/theta_init.bin", base.init, cfg.spec);
    w.params("params/theta_s.bin", base.params, cfg.spec);
  }
  w.jsonfile("params/theta_s.json", run_metadata(base));

  if (cfg.influence.solver == SolverKind::lissa && cfg.lissa_auto) {
    spdlog::info("tuning LiSSA scale over {} values", cfg.lissa_grid.size());
    const LissaTuning t = tune_for(cfg, base, data.train, jobs);
    cfg.influence.lissa.scale = t.scale;
    w.text("lissa_tuning.csv", tuning_csv(t));
    extra["lissa_tuning"] = tuning_json(t);
  }
  ExperimentSetup setup = make_setup(cfg, data, jobs);

  switch (cfg.mode) {
    case Mode::decompose: {
      const auto removals = sample_removals(data.train, setup.trials, setup.removals_per_trial, setup.removal_seed);
      spdlog::info("decomposing over {} trials", removals.size());
      const auto report = decompose(base, cfg.spec, data.train, removals, cfg.protocol, setup.influence, jobs);
      w.text("decomposition.csv", decomposition_csv(report));
      w.text("decomposition_long.csv", decomposition_long_csv(report));
      w.jsonfile("decomposition.json", to_json(report));
      break;
    }
    case Mode::correlate: {
      const auto removals = sample_removals(data.train, setup.trials, setup.removals_per_trial, setup.removal_seed);
      const auto test_ids = select_test_ids(cfg, data.test);
      CorrelationOptions opts;
      opts.baselines.clear();
      for (const auto& n : ex.at("baselines")) {
        const std::string s = n;
        opts.baselines.push_back(s == "cold" ? Baseline::cold
                                 : s == "warm" ? Baseline::warm
                                 : s == "pbrf" ? Baseline::pbrf
                                               : Baseline::two_stage_loo);
      }
      opts.sanity = ex.at("sanity").get<bool>();
      spdlog::info("correlating {} removals against {} test points", removals.size(), test_ids.size());
      const auto result = correlation_table(base, cfg.spec, data.train, removals, data.test, test_ids, cfg.protocol,
                                            setup.influence, opts, jobs);
      w.text("correlation.csv", correlation_csv(result));
      w.text("correlation_points.csv", correlation_points_csv(result));
      break;
    }
    case Mode::sweep: {
      const auto factor = sweep_factor_from_string(ex.at("sweep").at("factor"));
      const auto grid = ex.at("sweep").at("grid").get<std::vector<double>>();
      spdlog::info("sweeping {} over {} values", to_string(factor), grid.size());
      const auto points = factor_sweep(factor, grid, setup);
      w.text("sweep.csv", sweep_csv(factor, points));
      json pts = json::array();
      for (const auto& p : points) {
        json e = {{"value", p.value}};
        if (p.report) {
          json terms = json::object();
          for (auto t : kTerms)
            terms[to_string(t)] = {{"mean", p.report->summary(t).mean}, {"std", p.report->summary(t).std}};
          e["terms"] = terms;
        } else {
          e["error"] = p.error;
          spdlog::error("sweep point {} failed: {}", format_double(p.value), p.error);
        }
        pts.push_back(e);
      }
      json trends = json::object();
      for (auto t : kTerms) {
        try {
          trends[to_string(t)] = sweep_trend(points, t);
        } catch (const Error&) {
          trends[to_string(t)] = nullptr;
        }
      }
      w.jsonfile("sweep.json", {{"factor", to_string(factor)}, {"points", pts}, {"spearman_trend", trends}});
      break;
    }
    case Mode::mislabel: {
      const auto scorer = mislabel_scorer_from_string(ex.at("mislabel").at("scorer"));
      const auto fractions = ex.at("mislabel").at("fractions").get<std::vector<double>>();
      spdlog::info("scoring {} examples with {}", data.train.size(), to_string(scorer));
      const auto scores = self_scores(base, cfg.spec, data.train, scorer, cfg.protocol, setup.influence, jobs);
      const auto curve = detection_curve(scores, data.train, *data.corruption, fractions);
      w.text("mislabel_curve.csv", curve_csv(curve));
      std::string sc = "train_id,score,corrupted\n";
      const std::set<std::int64_t> bad(data.corruption->corrupted_ids.begin(), data.corruption->corrupted_ids.end());
      for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto id = data.train.ids()[i];
        sc += std::to_string(id) + "," + format_double(scores[i]) + "," + (bad.count(id) ? "1" : "0") + "\n";
      }
      w.text("self_scores.csv", sc);
      json orig = json::object();
      for (const auto& [id, label] : data.corruption->original_labels) orig[std::to_string(id)] = label;
      w.jsonfile("corruption.json", {{"seed", data.corruption->seed},
                                     {"corrupted_ids", data.corruption->corrupted_ids},
                                     {"original_labels", orig}});
      break;
    }
    case Mode::influence_scores: {
      const auto test_ids = select_test_ids(cfg, data.test);
      const InfluenceEngine engine(base.params, cfg.spec, data.train, aligned_influence(setup.influence, cfg.protocol));
      spdlog::info("solving for {} test points", test_ids.size());
      std::vector<ParamVector> stest(test_ids.size());
      std::vector<SolverReport> reports(test_ids.size());
      parallel_for(jobs, static_cast<int>(test_ids.size()), [&](int j) {
        const ParamVector g = engine.point_gradient(data.test, test_ids[static_cast<std::size_t>(j)]);
        reports[static_cast<std::size_t>(j)] = engine.solve(g);
        stest[static_cast<std::size_t>(j)] = reports[static_cast<std::size_t>(j)].solution;
      });
      std::vector<ScoreRow> rows;
      for (std::size_t j = 0; j < test_ids.size(); ++j) {
        const std::string stem = "stest/test_" + std::to_string(test_ids[j]);
        if (save) w.params(stem + ".bin", stest[j], cfg.spec);
        w.jsonfile(stem + ".json", to_json(reports[j], save ? "test_" + std::to_string(test_ids[j]) + ".bin" : ""));
      }
      for (auto id : data.train.ids()) {
        const ParamVector g = engine.removed_gradient({id});
        for (std::size_t j = 0; j < test_ids.size(); ++j)
          rows.push_back({id, test_ids[j], engine.epsilon() * g.dot(stest[j])});
      }
      w.text("influence_scores.csv",
             influence_scores_csv(rows, aligned_influence(setup.influence, cfg.protocol), engine.epsilon()));
      extra["influence_note"] =
          "scores are eps * grad L_test^T (C + lambda I)^{-1} grad L_train; groups scale by eps per member";
      break;
    }
  }
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg_in, const RunOptions& options) {
  ExperimentConfig cfg = cfg_in;
  if (options.out_dir) {
    cfg.output_dir = *options.out_dir;
    cfg.resolved["output"]["dir"] = *options.out_dir;
  }
  ArtifactWriter w(cfg.output_dir);
  std::filesystem::create_directories(cfg.output_dir);
  std::filesystem::remove(std::filesystem::path(cfg.output_dir) / "FAILED");
  json extra = json::object();
  try {
    run_mode(cfg, options, w, extra);
  } catch (const std::exception& e) {
    write_file((std::filesystem::path(cfg.output_dir) / "FAILED").string(), std::string(e.what()) + "\n");
    throw;
  }
  w.jsonfile("manifest.json", manifest_json(cfg, extra, w));
  RunResult r;
  r.out_dir = cfg.output_dir;
  r.files = w.files();
  return r;
}

LissaTuning tune_lissa(const ExperimentConfig& cfg_in, const RunOptions& options) {
  ExperimentConfig cfg = cfg_in;
  if (cfg.influence.solver != SolverKind::lissa)
    throw Error(ErrorKind::configuration, "influence.solver: tune-lissa needs solver \"lissa\"");
  if (options.out_dir) {
    cfg.output_dir = *options.out_dir;
    cfg.resolved["output"]["dir"] = *options.out_dir;
  }
  ArtifactWriter w(cfg.output_dir);
  std::filesystem::create_directories(cfg.output_dir);
  try {
    const PreparedData data = prepare_data(cfg);
    const BaseRun base = train_base(cfg.spec, data.train, cfg.train, cfg.init_seed);
    const LissaTuning t = tune_for(cfg, base, data.train, std::max(1, options.jobs));
    w.text("lissa_tuning.csv", tuning_csv(t));
    w.jsonfile("manifest.json", manifest_json(cfg, {{"lissa_tuning", tuning_json(t)}}, w));
    return t;
  } catch (const std::exception& e) {
    write_file((std::filesystem::path(cfg.output_dir) / "FAILED").string(), std::string(e.what()) + "\n");
    throw;
  }
}

}  // namespace pbrf
