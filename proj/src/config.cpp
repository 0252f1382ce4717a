#include "config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "codebook.hpp"

using json = nlohmann::json;

namespace cfasl {

ObjectiveConfig RunConfig::objective_config(int64_t dataset_size) const {
  ObjectiveConfig oc;
  if (objective == "beta_vae")
    oc.kind = ObjectiveConfig::Kind::beta_vae;
  else if (objective == "beta_tcvae")
    oc.kind = ObjectiveConfig::Kind::beta_tcvae;
  else
    throw_invalid("unknown objective '" + objective +
                  "' (valid: beta_vae, beta_tcvae)");
  oc.beta = beta;
  oc.alpha = alpha;
  oc.gamma = gamma;
  oc.dataset_size = dataset_size;
  if (likelihood == "bernoulli")
    oc.likelihood = ObjectiveConfig::Likelihood::bernoulli;
  else if (likelihood == "continuous_bernoulli")
    oc.likelihood = ObjectiveConfig::Likelihood::continuous_bernoulli;
  else
    throw_invalid("unknown likelihood '" + likelihood +
                  "' (valid: bernoulli, continuous_bernoulli)");
  return oc;
}

PerpForm RunConfig::perp_form_enum() const {
  if (perp_form == "cos_sq") return PerpForm::cos_sq;
  if (perp_form == "abs_cos") return PerpForm::abs_cos;
  throw_invalid("unknown perp_form '" + perp_form + "' (valid: cos_sq, abs_cos)");
}

void RunConfig::validate() const {
  CFASL_CHECK_ARG(batch_size >= 2 && batch_size % 2 == 0,
                  "config: batch_size must be even and >= 2");
  CFASL_CHECK_ARG(latent_dim >= 1, "config: latent_dim must be >= 1");
  CFASL_CHECK_ARG(effective_sections() == latent_dim,
                  "config: sections must equal latent_dim (|S| = |D|)");
  CFASL_CHECK_ARG(effective_elements() >= 1, "config: elements_per_section >= 1");
  CFASL_CHECK_ARG(steps >= 0, "config: steps must be >= 0");
  CFASL_CHECK_ARG(learning_rate > 0, "config: learning_rate must be positive");
  CFASL_CHECK_ARG(epsilon >= 0, "config: epsilon must be >= 0");
  CFASL_CHECK_ARG(threshold > 0, "config: threshold must be positive");
  CFASL_CHECK_ARG(gumbel_temperature > 0, "config: gumbel_temperature must be positive");
  CFASL_CHECK_ARG(beta >= 0, "config: beta must be >= 0");
  CFASL_CHECK_ARG(codebook_scale >= 0, "config: codebook_scale must be >= 0");
  CFASL_CHECK_ARG(pair_budget >= 1, "config: pair_budget must be >= 1");
  CFASL_CHECK_ARG(perp_pairs_per_step >= 1, "config: perp_pairs_per_step must be >= 1");
  CFASL_CHECK_ARG(checkpoint_every >= 1, "config: checkpoint_every must be >= 1");
  if (parallel_form != "neg_log_cos")
    throw_invalid("unknown parallel_form '" + parallel_form +
                  "' (valid: neg_log_cos)");
  perp_form_enum();  // validates
}

namespace {

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing chars");
    return d;
  } catch (const std::exception&) {
    throw_invalid("config key '" + key + "': cannot parse '" + v + "' as number");
  }
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing chars");
    return d;
  } catch (const std::exception&) {
    throw_invalid("config key '" + key + "': cannot parse '" + v + "' as integer");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw_invalid("config key '" + key + "': cannot parse '" + v + "' as bool");
}

}  // namespace

void RunConfig::set_key(const std::string& key, const std::string& value) {
  if (key == "dataset") dataset = value;
  else if (key == "output_dir") output_dir = value;
  else if (key == "objective") objective = value;
  else if (key == "beta") beta = parse_double(key, value);
  else if (key == "alpha") alpha = parse_double(key, value);
  else if (key == "gamma") gamma = parse_double(key, value);
  else if (key == "likelihood") likelihood = value;
  else if (key == "latent_dim") latent_dim = parse_int(key, value);
  else if (key == "sections") sections = parse_int(key, value);
  else if (key == "elements_per_section") elements_per_section = parse_int(key, value);
  else if (key == "codebook_scale") codebook_scale = parse_double(key, value);
  else if (key == "epsilon") { epsilon = parse_double(key, value); weights.epsilon = epsilon; }
  else if (key == "threshold") threshold = parse_double(key, value);
  else if (key == "gumbel_temperature") gumbel_temperature = parse_double(key, value);
  else if (key == "perp_form") perp_form = value;
  else if (key == "parallel_form") parallel_form = value;
  else if (key == "pair_budget") pair_budget = parse_int(key, value);
  else if (key == "perp_pairs_per_step") perp_pairs_per_step = parse_int(key, value);
  else if (key == "learning_rate") learning_rate = parse_double(key, value);
  else if (key == "batch_size") batch_size = parse_int(key, value);
  else if (key == "steps") steps = parse_int(key, value);
  else if (key == "seed") seed = static_cast<uint64_t>(parse_int(key, value));
  else if (key == "checkpoint_every") checkpoint_every = parse_int(key, value);
  else if (key.rfind("ablation.", 0) == 0) {
    std::map<std::string, bool> m = ablation.to_map();
    std::string name = key.substr(9);
    if (m.find(name) == m.end())
      throw_invalid("unknown ablation key '" + key + "'");
    m[name] = parse_bool(key, value);
    ablation = AblationMask::from_map(m);
  } else if (key.rfind("weight.", 0) == 0) {
    std::string name = key.substr(7);
    double v = parse_double(key, value);
    if (name == "parallel") weights.parallel = v;
    else if (name == "perpendicular") weights.perpendicular = v;
    else if (name == "sparsity") weights.sparsity = v;
    else if (name == "commutative") weights.commutative = v;
    else if (name == "prediction") weights.prediction = v;
    else if (name == "encoder_equiv") weights.encoder_equiv = v;
    else throw_invalid("unknown weight key '" + key + "'");
  } else {
    throw_invalid("unknown config key '" + key + "'");
  }
}

std::string RunConfig::to_json() const {
  json j;
  j["dataset"] = dataset;
  j["output_dir"] = output_dir;
  j["objective"] = objective;
  j["beta"] = beta;
  j["alpha"] = alpha;
  j["gamma"] = gamma;
  j["likelihood"] = likelihood;
  j["latent_dim"] = latent_dim;
  j["sections"] = sections;
  j["elements_per_section"] = elements_per_section;
  j["codebook_scale"] = codebook_scale;
  j["epsilon"] = epsilon;
  j["threshold"] = threshold;
  j["gumbel_temperature"] = gumbel_temperature;
  j["perp_form"] = perp_form;
  j["parallel_form"] = parallel_form;
  j["pair_budget"] = pair_budget;
  j["perp_pairs_per_step"] = perp_pairs_per_step;
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["steps"] = steps;
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["ablation"] = ablation.to_map();
  j["weights"] = {{"parallel", weights.parallel},
                  {"perpendicular", weights.perpendicular},
                  {"sparsity", weights.sparsity},
                  {"commutative", weights.commutative},
                  {"prediction", weights.prediction},
                  {"encoder_equiv", weights.encoder_equiv},
                  {"epsilon", weights.epsilon}};
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw_io(std::string("invalid config json: ") + e.what());
  }
  RunConfig c;
  try {
    c.dataset = j.value("dataset", c.dataset);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.objective = j.value("objective", c.objective);
    c.beta = j.value("beta", c.beta);
    c.alpha = j.value("alpha", c.alpha);
    c.gamma = j.value("gamma", c.gamma);
    c.likelihood = j.value("likelihood", c.likelihood);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.sections = j.value("sections", c.sections);
    c.elements_per_section = j.value("elements_per_section", c.elements_per_section);
    c.codebook_scale = j.value("codebook_scale", c.codebook_scale);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.threshold = j.value("threshold", c.threshold);
    c.gumbel_temperature = j.value("gumbel_temperature", c.gumbel_temperature);
    c.perp_form = j.value("perp_form", c.perp_form);
    c.parallel_form = j.value("parallel_form", c.parallel_form);
    c.pair_budget = j.value("pair_budget", c.pair_budget);
    c.perp_pairs_per_step = j.value("perp_pairs_per_step", c.perp_pairs_per_step);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("ablation"))
      c.ablation = AblationMask::from_map(
          j.at("ablation").get<std::map<std::string, bool>>());
    if (j.contains("weights")) {
      const json& w = j.at("weights");
      c.weights.parallel = w.value("parallel", c.weights.parallel);
      c.weights.perpendicular = w.value("perpendicular", c.weights.perpendicular);
      c.weights.sparsity = w.value("sparsity", c.weights.sparsity);
      c.weights.commutative = w.value("commutative", c.weights.commutative);
      c.weights.prediction = w.value("prediction", c.weights.prediction);
      c.weights.encoder_equiv = w.value("encoder_equiv", c.weights.encoder_equiv);
      c.weights.epsilon = w.value("epsilon", c.weights.epsilon);
    }
  } catch (const json::exception& e) {
    throw_io(std::string("invalid config json: ") + e.what());
  }
  c.weights.epsilon = c.epsilon;
  return c;
}

RunConfig RunConfig::from_toml_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw_io("cannot open config file: " + path);
  RunConfig c;
  std::string line;
  std::string prefix;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    // Strip comments outside quotes.
    bool in_quote = false;
    for (size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quote = !in_quote;
      if (line[i] == '#' && !in_quote) {
        line = line.substr(0, i);
        break;
      }
    }
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r\n");
      if (a == std::string::npos) return std::string();
      size_t b = s.find_last_not_of(" \t\r\n");
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      prefix = trim(line.substr(1, line.size() - 2));
      if (!prefix.empty()) prefix += ".";
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw_invalid("config file " + path + ":" + std::to_string(lineno) +
                    ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    c.set_key(prefix + key, value);
  }
  c.weights.epsilon = c.epsilon;
  return c;
}

}  // namespace cfasl
