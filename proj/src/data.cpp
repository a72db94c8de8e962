#include "dln/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace dln {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stod(tok));
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

/// First k entries of a partial Fisher-Yates shuffle of [0, n): a uniform
/// k-subset, returned sorted.
std::vector<int> sample_without_replacement(int n, int k, Philox& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(rng.uniform_int(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

double NoiseSpec::t0() const {
  switch (dist) {
    case NoiseDist::gaussian: return param;        // P(|z| >= sigma) ~ 0.317
    case NoiseDist::uniform:  return 0.5 * param;  // P(|z| >= a/2) = 0.5
    case NoiseDist::constant: return param;        // |z| = c always
  }
  return 0.0;
}

double NoiseSpec::p0() const {
  switch (dist) {
    case NoiseDist::gaussian: return 0.317;
    case NoiseDist::uniform:  return 0.5;
    case NoiseDist::constant: return 1.0;
  }
  return 0.0;
}

double NoiseSpec::sample(Philox& rng) const {
  switch (dist) {
    case NoiseDist::gaussian: return rng.normal(0.0, param);
    case NoiseDist::uniform:  return rng.uniform(-param, param);
    case NoiseDist::constant: return rng.uniform01() < 0.5 ? -param : param;
  }
  return 0.0;
}

void NoiseSpec::validate() const {
  if (!(corruption_prob >= 0.0) || corruption_prob >= 1.0)
    throw std::invalid_argument("NoiseSpec: corruption_prob must be in [0, 1)");
  if (!(param > 0.0))
    throw std::invalid_argument("NoiseSpec: distribution parameter must be > 0");
}

std::string to_string(NoiseDist dist) {
  switch (dist) {
    case NoiseDist::gaussian: return "gaussian";
    case NoiseDist::uniform:  return "uniform";
    case NoiseDist::constant: return "constant";
  }
  return "?";
}

NoiseDist noise_dist_from_string(const std::string& name) {
  if (name == "gaussian") return NoiseDist::gaussian;
  if (name == "uniform") return NoiseDist::uniform;
  if (name == "constant") return NoiseDist::constant;
  throw std::invalid_argument("unknown noise distribution: " + name);
}

std::vector<int> Dataset::support() const {
  std::vector<int> s;
  for (int l = 0; l < d; ++l)
    if (theta_star[l] != 0.0) s.push_back(l);
  return s;
}

Vec generate_ground_truth(int d, int k, double theta_min, double theta_max,
                          Philox& rng) {
  if (k < 1 || k > d)
    throw std::invalid_argument("generate_ground_truth: need 1 <= k <= d");
  if (!(theta_min > 0.0) || !(theta_max >= theta_min))
    throw std::invalid_argument("generate_ground_truth: need 0 < theta_min <= theta_max");
  const std::vector<int> supp = sample_without_replacement(d, k, rng);
  Vec theta(d, 0.0);
  for (int idx : supp) theta[idx] = rng.uniform(theta_min, theta_max);
  return theta;
}

double condition_number(const Vec& theta_star) {
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (double v : theta_star) {
    if (v == 0.0) continue;
    const double a = std::abs(v);
    if (!any) {
      lo = hi = a;
      any = true;
    } else {
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
  }
  if (!any) throw std::invalid_argument("condition_number: all-zero vector");
  return hi / lo;
}

std::vector<double> generate_design(int m, int d, Philox& rng) {
  if (m < 1 || d < 1) throw std::invalid_argument("generate_design: m, d >= 1");
  std::vector<double> design(static_cast<std::size_t>(m) * d);
  for (double& v : design) v = rng.normal();
  return design;
}

std::pair<Vec, std::vector<int>> generate_noise(int m, const NoiseSpec& spec,
                                                Philox& support_rng,
                                                Philox& value_rng) {
  spec.validate();
  const int count = static_cast<int>(std::floor(spec.corruption_prob * m));
  Vec noise(m, 0.0);
  std::vector<int> support;
  if (count > 0) {
    support = sample_without_replacement(m, count, support_rng);
    for (int idx : support) noise[idx] = spec.sample(value_rng);
  }
  return {std::move(noise), std::move(support)};
}

Dataset generate_dataset(int d, int k, int m, double theta_min,
                         double theta_max, const NoiseSpec& spec,
                         std::uint64_t seed) {
  Dataset ds;
  ds.d = d;
  ds.m = m;
  ds.seed = seed;
  ds.noise_spec = spec;

  Philox truth_rng(seed, streams::kGroundTruth);
  Philox design_rng(seed, streams::kDesign);
  Philox support_rng(seed, streams::kNoiseSupport);
  Philox value_rng(seed, streams::kNoiseValues);

  ds.theta_star = generate_ground_truth(d, k, theta_min, theta_max, truth_rng);
  ds.design = generate_design(m, d, design_rng);
  auto [noise, support] = generate_noise(m, spec, support_rng, value_rng);
  ds.noise = std::move(noise);
  ds.noise_support = std::move(support);

  ds.responses.resize(m);
  for (int i = 0; i < m; ++i) {
    const auto x = ds.row(i);
    double acc = 0.0;
    for (int l = 0; l < d; ++l) acc += ds.theta_star[l] * x[l];
    ds.responses[i] = acc + ds.noise[i];
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& csv_path,
                  const std::filesystem::path& json_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot open " + csv_path.string());
  csv << "# theta_star";
  for (double v : ds.theta_star) csv << ',' << fmt_double(v);
  csv << "\n# epsilon";
  for (double v : ds.noise) csv << ',' << fmt_double(v);
  csv << "\n# support";
  for (int idx : ds.noise_support) csv << ',' << idx;
  csv << "\n";
  for (int i = 0; i < ds.m; ++i) {
    const auto x = ds.row(i);
    for (int l = 0; l < ds.d; ++l) csv << fmt_double(x[l]) << ',';
    csv << fmt_double(ds.responses[i]) << "\n";
  }

  nlohmann::ordered_json meta;
  meta["schema"] = "dln.dataset.v1";
  meta["seed"] = ds.seed;
  meta["m"] = ds.m;
  meta["d"] = ds.d;
  meta["noise"] = {{"p", ds.noise_spec.corruption_prob},
                   {"dist", to_string(ds.noise_spec.dist)},
                   {"param", ds.noise_spec.param},
                   // |S| = floor(p m), so the realized fraction can differ
                   {"realized_p", static_cast<double>(ds.noise_support.size()) / ds.m}};
  std::ofstream js(json_path);
  if (!js) throw std::runtime_error("cannot open " + json_path.string());
  js << meta.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& csv_path,
                     const std::filesystem::path& json_path) {
  std::ifstream js(json_path);
  if (!js) throw std::runtime_error("cannot open " + json_path.string());
  nlohmann::json meta = nlohmann::json::parse(js);
  if (meta.value("schema", "") != "dln.dataset.v1")
    throw std::runtime_error("unexpected dataset schema in " + json_path.string());

  Dataset ds;
  ds.seed = meta.at("seed").get<std::uint64_t>();
  ds.m = meta.at("m").get<int>();
  ds.d = meta.at("d").get<int>();
  ds.noise_spec.corruption_prob = meta.at("noise").at("p").get<double>();
  ds.noise_spec.dist = noise_dist_from_string(meta.at("noise").at("dist").get<std::string>());
  ds.noise_spec.param = meta.at("noise").at("param").get<double>();

  std::ifstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot open " + csv_path.string());
  std::string line;
  auto expect_header = [&](const std::string& tag) -> std::string {
    if (!std::getline(csv, line) || line.rfind("# " + tag, 0) != 0)
      throw std::runtime_error("dataset csv: missing header row " + tag);
    const auto pos = line.find(',');
    return pos == std::string::npos ? std::string() : line.substr(pos + 1);
  };
  ds.theta_star = parse_double_list(expect_header("theta_star"));
  ds.noise = parse_double_list(expect_header("epsilon"));
  ds.noise_support = parse_int_list(expect_header("support"));

  ds.design.reserve(static_cast<std::size_t>(ds.m) * ds.d);
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const std::vector<double> vals = parse_double_list(line);
    if (static_cast<int>(vals.size()) != ds.d + 1)
      throw std::runtime_error("dataset csv: bad sample row width");
    ds.design.insert(ds.design.end(), vals.begin(), vals.end() - 1);
    ds.responses.push_back(vals.back());
  }
  if (static_cast<int>(ds.responses.size()) != ds.m)
    throw std::runtime_error("dataset csv: sample count mismatch");
  return ds;
}

}  // namespace dln
