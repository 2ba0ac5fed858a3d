#include "dynroute/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "dynroute/errors.hpp"

namespace dynroute {

namespace {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

// Reads optional keys from one object and rejects whatever was not read.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: " + name_ + "." + key + " has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("config: unknown key " + name_ + "." + it.key());
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_supernet(const json& j, SupernetSpec& s) {
  Section sec(j, "supernet");
  sec.read("num_layers", s.num_layers);
  sec.read("num_scales", s.num_scales);
  sec.read("channels_per_scale", s.channels_per_scale);
  sec.read("image_channels", s.image_channels);
  sec.read("gate_threshold", s.gate_threshold);
  sec.read("head_channels", s.head_channels);
  sec.finish();
}

void read_budget(const json& j, BudgetConfig& b, ScaleIntervals& intervals) {
  Section sec(j, "budget");
  sec.read("c0_ratio", b.c0_ratio);
  std::string strategy = to_string(b.strategy);
  sec.read("strategy", strategy);
  b.strategy = budget_strategy_from_string(strategy);
  sec.read("loss_buffer_len", b.loss_buffer_len);
  sec.read("intervals", intervals.upper);
  sec.finish();
}

void read_similarity(const json& j, SimilarityConfig& s) {
  Section sec(j, "similarity");
  sec.read("min", s.min);
  sec.read("max", s.max);
  sec.finish();
}

void read_head(const json& j, HeadConfig& h) {
  Section sec(j, "head");
  sec.read("num_classes", h.num_classes);
  sec.read("tower_depth", h.tower_depth);
  sec.read("focal_alpha", h.focal_alpha);
  sec.read("focal_gamma", h.focal_gamma);
  sec.finish();
}

void read_data(const json& j, SynthConfig& d) {
  Section sec(j, "data");
  sec.read("image_size", d.image_size);
  sec.read("num_images", d.num_images);
  sec.read("num_classes", d.num_classes);
  sec.read("channels", d.channels);
  sec.read("noise", d.noise);
  sec.read("max_objects_per_interval", d.max_objects_per_interval);
  sec.read("seed", d.seed);
  if (const json* mix = sec.child("scale_mix")) {
    if (!mix->is_array()) throw ConfigError("config: data.scale_mix must be an array");
    d.scale_mix.clear();
    for (const json& entry : *mix) {
      Section e(entry, "data.scale_mix[]");
      ScalePattern p;
      std::vector<int> bits;
      e.read("pattern", bits);
      e.read("weight", p.weight);
      e.finish();
      for (int bit : bits) {
        if (bit != 0 && bit != 1) throw ConfigError("config: scale_mix patterns must be 0/1");
        p.pattern.push_back(static_cast<std::uint8_t>(bit));
      }
      d.scale_mix.push_back(std::move(p));
    }
  }
  sec.finish();
}

void read_train(const json& j, TrainConfig& t) {
  Section sec(j, "train");
  sec.read("batch_size", t.batch_size);
  sec.read("epochs", t.epochs);
  sec.read("base_lr", t.base_lr);
  sec.read("lr_drop_epochs", t.lr_drop_epochs);
  sec.read("lr_drop_factor", t.lr_drop_factor);
  sec.read("momentum", t.momentum);
  sec.read("weight_decay", t.weight_decay);
  sec.read("lambda_global", t.weights.lambda_global);
  sec.read("lambda_local", t.weights.lambda_local);
  sec.read("regularizer_warmup_epochs", t.regularizer_warmup_epochs);
  sec.read("regularizer_ramp_steps", t.regularizer_ramp_steps);
  sec.read("pretrain_epochs", t.pretrain_epochs);
  sec.read("seed", t.seed);
  sec.finish();
}

}  // namespace

void RunConfig::validate() const {
  setup.supernet.validate();
  setup.head.validate();
  setup.budget.validate();
  setup.similarity.validate();
  setup.intervals.validate();
  setup.train.validate();
  data.validate();
  if (data.num_classes != setup.head.num_classes) {
    throw ConfigError("config: data.num_classes must equal head.num_classes");
  }
  if (data.channels != setup.supernet.image_channels) {
    throw ConfigError("config: data.channels must equal supernet.image_channels");
  }
  if (data.image_size % setup.supernet.input_multiple() != 0) {
    throw ConfigError("config: data.image_size must be a multiple of " +
                      std::to_string(setup.supernet.input_multiple()));
  }
  if (data.intervals.upper != setup.intervals.upper) {
    throw ConfigError("config: data and budget intervals differ");
  }
}

void RunConfig::set_seed(std::uint64_t seed) {
  data.seed = seed;
  setup.train.seed = seed;
}

void RunConfig::apply_seed_env() {
  const char* env = std::getenv("DYNROUTE_SEED");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("DYNROUTE_SEED is not an integer: ") + env);
  set_seed(v);
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  Section root(j, "config");
  std::string schema = kConfigSchema;
  root.read("schema", schema);
  if (schema != kConfigSchema) throw ConfigError("config: unsupported schema '" + schema + "'");
  if (const json* s = root.child("supernet")) read_supernet(*s, c.setup.supernet);
  if (const json* s = root.child("budget")) read_budget(*s, c.setup.budget, c.setup.intervals);
  if (const json* s = root.child("similarity")) read_similarity(*s, c.setup.similarity);
  if (const json* s = root.child("head")) read_head(*s, c.setup.head);
  if (const json* s = root.child("data")) read_data(*s, c.data);
  if (const json* s = root.child("train")) read_train(*s, c.setup.train);
  root.finish();
  c.data.intervals = c.setup.intervals;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& c) {
  const SupernetSpec& s = c.setup.supernet;
  const TrainConfig& t = c.setup.train;
  ordered j;
  j["schema"] = kConfigSchema;
  j["supernet"] = {{"num_layers", s.num_layers},
                   {"num_scales", s.num_scales},
                   {"channels_per_scale", s.channels_per_scale},
                   {"image_channels", s.image_channels},
                   {"gate_threshold", s.gate_threshold},
                   {"head_channels", s.head_channels}};
  j["budget"] = {{"c0_ratio", c.setup.budget.c0_ratio},
                 {"strategy", to_string(c.setup.budget.strategy)},
                 {"loss_buffer_len", c.setup.budget.loss_buffer_len},
                 {"intervals", c.setup.intervals.upper}};
  j["similarity"] = {{"min", c.setup.similarity.min}, {"max", c.setup.similarity.max}};
  j["head"] = {{"num_classes", c.setup.head.num_classes},
               {"tower_depth", c.setup.head.tower_depth},
               {"focal_alpha", c.setup.head.focal_alpha},
               {"focal_gamma", c.setup.head.focal_gamma}};
  ordered mix = ordered::array();
  for (const ScalePattern& p : c.data.scale_mix) {
    std::vector<int> bits(p.pattern.begin(), p.pattern.end());
    mix.push_back({{"pattern", bits}, {"weight", p.weight}});
  }
  j["data"] = {{"image_size", c.data.image_size},
               {"num_images", c.data.num_images},
               {"num_classes", c.data.num_classes},
               {"channels", c.data.channels},
               {"noise", c.data.noise},
               {"max_objects_per_interval", c.data.max_objects_per_interval},
               {"seed", c.data.seed},
               {"scale_mix", mix}};
  j["train"] = {{"batch_size", t.batch_size},
                {"epochs", t.epochs},
                {"base_lr", t.base_lr},
                {"lr_drop_epochs", t.lr_drop_epochs},
                {"lr_drop_factor", t.lr_drop_factor},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"lambda_global", t.weights.lambda_global},
                {"lambda_local", t.weights.lambda_local},
                {"regularizer_warmup_epochs", t.regularizer_warmup_epochs},
                {"regularizer_ramp_steps", t.regularizer_ramp_steps},
                {"pretrain_epochs", t.pretrain_epochs},
                {"seed", t.seed}};
  return j.dump();
}

}  // namespace dynroute
