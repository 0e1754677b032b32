#include "bimce/config.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bimce/dataset.hpp"
#include "bimce/rng.hpp"

namespace bimce {

namespace {

[[noreturn]] void bad_key(const std::string& key, const std::string& why) {
  throw std::invalid_argument("config key '" + key + "': " + why);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) bad_key(key, "trailing characters in number '" + v + "'");
    return x;
  } catch (const std::invalid_argument&) {
    bad_key(key, "expected a number, got '" + v + "'");
  } catch (const std::out_of_range&) {
    bad_key(key, "number out of range: '" + v + "'");
  }
}

int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) bad_key(key, "trailing characters in integer '" + v + "'");
    return x;
  } catch (const std::invalid_argument&) {
    bad_key(key, "expected an integer, got '" + v + "'");
  } catch (const std::out_of_range&) {
    bad_key(key, "integer out of range: '" + v + "'");
  }
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      parts.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) parts.push_back(cur);
  return parts;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string fmt(double x) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

}  // namespace

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void apply_config_line(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "sim.carrier_frequency_hz") cfg.sim.carrier_frequency_hz = to_double(key, value);
  else if (key == "sim.subcarrier_spacing_hz") cfg.sim.subcarrier_spacing_hz = to_double(key, value);
  else if (key == "sim.n_tx") cfg.sim.n_tx = static_cast<int>(to_int(key, value));
  else if (key == "sim.n_rx") cfg.sim.n_rx = static_cast<int>(to_int(key, value));
  else if (key == "sim.n_streams") cfg.sim.n_streams = static_cast<int>(to_int(key, value));
  else if (key == "sim.n_subcarriers") cfg.sim.n_subcarriers = static_cast<int>(to_int(key, value));
  else if (key == "sim.n_symbols") cfg.sim.n_symbols = static_cast<int>(to_int(key, value));
  else if (key == "sim.ue_speed_mps") cfg.sim.ue_speed_mps = to_double(key, value);
  else if (key == "sim.num_taps") cfg.sim.num_taps = static_cast<int>(to_int(key, value));
  else if (key == "sim.delay_spread_s") cfg.sim.delay_spread_s = to_double(key, value);
  else if (key == "sim.seed") cfg.sim.seed = static_cast<uint64_t>(to_int(key, value));
  else if (key == "pattern.n_freq") cfg.pattern.n_freq = static_cast<int>(to_int(key, value));
  else if (key == "pattern.symbols") {
    cfg.pattern.symbols.clear();
    for (const std::string& p : split_list(value))
      cfg.pattern.symbols.push_back(static_cast<int>(to_int(key, p)));
    if (cfg.pattern.symbols.empty()) bad_key(key, "expected a comma-separated index list");
  } else if (key == "model.backbone") {
    try { cfg.model.backbone = backbone_from_string(value); }
    catch (const std::invalid_argument& e) { bad_key(key, e.what()); }
  } else if (key == "model.placement") {
    try { cfg.model.placement = placement_from_string(value); }
    catch (const std::invalid_argument& e) { bad_key(key, e.what()); }
  } else if (key == "model.channels") cfg.model.channels = static_cast<int>(to_int(key, value));
  else if (key == "model.blocks") cfg.model.blocks = static_cast<int>(to_int(key, value));
  else if (key == "model.bim_hidden") cfg.model.bim_hidden = static_cast<int>(to_int(key, value));
  else if (key == "model.bim_inner" || key == "model.bim_outer") {
    try {
      (key == "model.bim_inner" ? cfg.model.bim_inner : cfg.model.bim_outer) =
          act_from_string(value);
    } catch (const std::invalid_argument& e) { bad_key(key, e.what()); }
  } else if (key == "model.belief_mean_db") cfg.model.belief_mean_db = static_cast<float>(to_double(key, value));
  else if (key == "model.belief_std_db") cfg.model.belief_std_db = static_cast<float>(to_double(key, value));
  else if (key == "model.mixer_token_hidden") cfg.model.mixer_token_hidden = static_cast<int>(to_int(key, value));
  else if (key == "model.mixer_channel_hidden") cfg.model.mixer_channel_hidden = static_cast<int>(to_int(key, value));
  else if (key == "train.batch") cfg.train.batch = static_cast<int>(to_int(key, value));
  else if (key == "train.lr") cfg.train.lr = static_cast<float>(to_double(key, value));
  else if (key == "train.epochs") cfg.train.epochs = static_cast<int>(to_int(key, value));
  else if (key == "train.seed") cfg.train.seed = static_cast<uint64_t>(to_int(key, value));
  else if (key == "train.data_seed") cfg.train.data_seed = static_cast<uint64_t>(to_int(key, value));
  else if (key == "train.train_samples") cfg.train.train_samples = static_cast<int>(to_int(key, value));
  else if (key == "train.val_samples") cfg.train.val_samples = static_cast<int>(to_int(key, value));
  else if (key == "train.ebno_lo_db") cfg.train.ebno_lo_db = to_double(key, value);
  else if (key == "train.ebno_hi_db") cfg.train.ebno_hi_db = to_double(key, value);
  else if (key == "eval.test_samples") cfg.eval.test_samples = static_cast<int>(to_int(key, value));
  else if (key == "eval.ebno_list") {
    cfg.eval.ebno_list.clear();
    for (const std::string& p : split_list(value)) cfg.eval.ebno_list.push_back(to_double(key, p));
    if (cfg.eval.ebno_list.empty()) bad_key(key, "expected a comma-separated dB list");
  } else if (key == "lmmse.calibration_samples") cfg.lmmse.calibration_samples = static_cast<int>(to_int(key, value));
  else if (key == "lmmse.epsilon") cfg.lmmse.epsilon = static_cast<float>(to_double(key, value));
  else bad_key(key, "unknown key");
}

void ExperimentConfig::finalize() {
  sim.validate();
  if (pattern.n_freq < 1 || pattern.n_freq > sim.n_subcarriers)
    throw std::invalid_argument("config key 'pattern.n_freq': outside [1, sim.n_subcarriers]");
  for (int s : pattern.symbols)
    if (s < 0 || s >= sim.n_symbols)
      throw std::invalid_argument("config key 'pattern.symbols': index " + std::to_string(s) +
                                  " outside [0, sim.n_symbols)");
  if (train.batch < 1) throw std::invalid_argument("config key 'train.batch': must be positive");
  if (train.epochs < 0) throw std::invalid_argument("config key 'train.epochs': must be nonnegative");
  if (train.train_samples < 1 || train.val_samples < 0)
    throw std::invalid_argument("config key 'train.train_samples/val_samples': bad sizes");
  if (train.ebno_hi_db < train.ebno_lo_db)
    throw std::invalid_argument("config key 'train.ebno_hi_db': below train.ebno_lo_db");
  if (eval.test_samples < 1)
    throw std::invalid_argument("config key 'eval.test_samples': must be positive");
  if (lmmse.calibration_samples < 1)
    throw std::invalid_argument("config key 'lmmse.calibration_samples': must be positive");
  if (!(lmmse.epsilon >= 0)) throw std::invalid_argument("config key 'lmmse.epsilon': negative");

  // derived model geometry
  model.n_rx = sim.n_rx;
  model.n_cp = pattern.n_freq;
  model.n_lp = static_cast<int>(pattern.symbols.size());
  model.n_c = sim.n_subcarriers;
  model.n_l = sim.n_symbols;
  model.validate();
}

std::string ExperimentConfig::echo() const {
  std::ostringstream o;
  o << "eval.ebno_list = ";
  for (size_t i = 0; i < eval.ebno_list.size(); ++i)
    o << (i ? "," : "") << fmt(eval.ebno_list[i]);
  o << '\n';
  o << "eval.test_samples = " << eval.test_samples << '\n';
  o << "lmmse.calibration_samples = " << lmmse.calibration_samples << '\n';
  o << "lmmse.epsilon = " << fmt(lmmse.epsilon) << '\n';
  o << "model.backbone = " << to_string(model.backbone) << '\n';
  o << "model.belief_mean_db = " << fmt(model.belief_mean_db) << '\n';
  o << "model.belief_std_db = " << fmt(model.belief_std_db) << '\n';
  o << "model.bim_hidden = " << model.bim_hidden << '\n';
  o << "model.bim_inner = " << to_string(model.bim_inner) << '\n';
  o << "model.bim_outer = " << to_string(model.bim_outer) << '\n';
  o << "model.blocks = " << model.blocks << '\n';
  o << "model.channels = " << model.channels << '\n';
  o << "model.mixer_channel_hidden = " << model.mixer_channel_hidden << '\n';
  o << "model.mixer_token_hidden = " << model.mixer_token_hidden << '\n';
  o << "model.placement = " << to_string(model.placement) << '\n';
  o << "pattern.n_freq = " << pattern.n_freq << '\n';
  o << "pattern.symbols = ";
  for (size_t i = 0; i < pattern.symbols.size(); ++i) o << (i ? "," : "") << pattern.symbols[i];
  o << '\n';
  o << "sim.carrier_frequency_hz = " << fmt(sim.carrier_frequency_hz) << '\n';
  o << "sim.delay_spread_s = " << fmt(sim.delay_spread_s) << '\n';
  o << "sim.n_rx = " << sim.n_rx << '\n';
  o << "sim.n_streams = " << sim.n_streams << '\n';
  o << "sim.n_subcarriers = " << sim.n_subcarriers << '\n';
  o << "sim.n_symbols = " << sim.n_symbols << '\n';
  o << "sim.n_tx = " << sim.n_tx << '\n';
  o << "sim.num_taps = " << sim.num_taps << '\n';
  o << "sim.seed = " << sim.seed << '\n';
  o << "sim.subcarrier_spacing_hz = " << fmt(sim.subcarrier_spacing_hz) << '\n';
  o << "sim.ue_speed_mps = " << fmt(sim.ue_speed_mps) << '\n';
  o << "train.batch = " << train.batch << '\n';
  o << "train.data_seed = " << train.data_seed << '\n';
  o << "train.ebno_hi_db = " << fmt(train.ebno_hi_db) << '\n';
  o << "train.ebno_lo_db = " << fmt(train.ebno_lo_db) << '\n';
  o << "train.epochs = " << train.epochs << '\n';
  o << "train.lr = " << fmt(train.lr) << '\n';
  o << "train.seed = " << train.seed << '\n';
  o << "train.train_samples = " << train.train_samples << '\n';
  o << "train.val_samples = " << train.val_samples << '\n';
  return o.str();
}

uint64_t ExperimentConfig::hash() const { return fnv1a(echo()); }

uint64_t ExperimentConfig::stats_hash() const {
  std::ostringstream o;
  o << fmt(sim.carrier_frequency_hz) << '|' << fmt(sim.subcarrier_spacing_hz) << '|' << sim.n_tx
    << '|' << sim.n_rx << '|' << sim.n_streams << '|' << sim.n_subcarriers << '|' << sim.n_symbols
    << '|' << fmt(sim.ue_speed_mps) << '|' << sim.num_taps << '|' << fmt(sim.delay_spread_s) << '|'
    << pattern.n_freq << '|';
  for (int s : pattern.symbols) o << s << ',';
  o << '|' << lmmse.calibration_samples << '|' << fmt(lmmse.epsilon);
  return fnv1a(o.str());
}

uint64_t ExperimentConfig::cell_hash() const {
  std::ostringstream o;
  o << fmt(sim.carrier_frequency_hz) << '|' << fmt(sim.subcarrier_spacing_hz) << '|' << sim.n_tx
    << '|' << sim.n_rx << '|' << sim.n_streams << '|' << sim.n_subcarriers << '|' << sim.n_symbols
    << '|' << fmt(sim.ue_speed_mps) << '|' << sim.num_taps << '|' << fmt(sim.delay_spread_s) << '|'
    << pattern.n_freq << '|';
  for (int s : pattern.symbols) o << s << ',';
  o << '|' << to_string(model.backbone) << '|' << to_string(model.placement) << '|'
    << model.channels << '|' << model.blocks << '|' << model.bim_hidden << '|'
    << to_string(model.bim_inner) << '|' << to_string(model.bim_outer) << '|'
    << fmt(model.belief_mean_db) << '|' << fmt(model.belief_std_db) << '|'
    << model.mixer_token_hidden << '|' << model.mixer_channel_hidden << '|' << train.batch << '|'
    << fmt(train.lr) << '|' << train.epochs << '|' << train.seed << '|' << train.data_seed << '|'
    << train.train_samples << '|' << train.val_samples << '|' << fmt(train.ebno_lo_db) << '|'
    << fmt(train.ebno_hi_db);
  return fnv1a(o.str());
}

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + line + "'");
    apply_config_line(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  for (const std::string& ov : overrides) {
    const size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("override '" + ov + "': expected key=value");
    apply_config_line(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  cfg.finalize();
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path,
                                   const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), overrides);
}

namespace {
constexpr char kCovMagic[7] = {'B', 'I', 'M', 'C', 'O', 'V', '1'};
}

void write_covariance(const std::string& path, const CovarianceModel& cov, uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("covariance: cannot open '" + path + "' for writing");
  out.write(kCovMagic, sizeof(kCovMagic));
  const uint32_t version = 1;
  auto put = [&](const auto& x) { out.write(reinterpret_cast<const char*>(&x), sizeof(x)); };
  put(version);
  put(config_hash);
  const uint32_t n_c = static_cast<uint32_t>(cov.n_c), n_l = static_cast<uint32_t>(cov.n_l);
  put(n_c);
  put(n_l);
  const uint64_t count = static_cast<uint64_t>(cov.sample_count);
  put(count);
  put(cov.epsilon);
  out.write(reinterpret_cast<const char*>(cov.mean.data()),
            static_cast<std::streamsize>(cov.mean.size() * sizeof(std::complex<float>)));
  out.write(reinterpret_cast<const char*>(cov.r_gg.data()),
            static_cast<std::streamsize>(cov.r_gg.size() * sizeof(std::complex<float>)));
  if (!out) throw std::runtime_error("covariance: short write to '" + path + "'");
}

CovarianceModel read_covariance(const std::string& path, uint64_t expect_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("covariance: cannot open '" + path + "'");
  char magic[7];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::memcmp(magic, kCovMagic, sizeof(magic)) != 0)
    throw std::runtime_error("covariance: magic mismatch in '" + path + "'");
  auto get = [&](auto& x, const char* what) {
    in.read(reinterpret_cast<char*>(&x), sizeof(x));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(x)))
      throw std::runtime_error(std::string("covariance: truncated header field ") + what);
  };
  uint32_t version = 0;
  get(version, "version");
  if (version != 1) throw std::runtime_error("covariance: unsupported version");
  uint64_t hash = 0;
  get(hash, "config hash");
  if (hash != expect_hash)
    throw std::runtime_error("covariance: config hash mismatch in '" + path +
                             "' (stale cache for another configuration)");
  CovarianceModel cov;
  uint32_t n_c = 0, n_l = 0;
  get(n_c, "n_c");
  get(n_l, "n_l");
  uint64_t count = 0;
  get(count, "sample count");
  get(cov.epsilon, "epsilon");
  cov.n_c = static_cast<int>(n_c);
  cov.n_l = static_cast<int>(n_l);
  cov.dim = cov.n_c * cov.n_l;
  cov.sample_count = static_cast<int64_t>(count);
  cov.mean.resize(static_cast<size_t>(cov.dim));
  cov.r_gg.resize(static_cast<size_t>(cov.dim) * cov.dim);
  in.read(reinterpret_cast<char*>(cov.mean.data()),
          static_cast<std::streamsize>(cov.mean.size() * sizeof(std::complex<float>)));
  in.read(reinterpret_cast<char*>(cov.r_gg.data()),
          static_cast<std::streamsize>(cov.r_gg.size() * sizeof(std::complex<float>)));
  if (!in) throw std::runtime_error("covariance: truncated payload in '" + path + "'");
  return cov;
}

CovarianceModel lmmse_statistics(const ExperimentConfig& cfg, const std::string& cache_dir,
                                 int threads) {
  const uint64_t key = cfg.stats_hash();
  std::string path;
  if (!cache_dir.empty()) {
    std::filesystem::create_directories(cache_dir);
    char name[64];
    std::snprintf(name, sizeof(name), "cov_%016" PRIx64 ".bin", key);
    path = (std::filesystem::path(cache_dir) / name).string();
    if (std::filesystem::exists(path)) return read_covariance(path, key);
  }
  const PilotPattern pattern = cfg.make_pattern();
  const CovarianceModel cov = estimate_covariance_stream(
      [&](int i) {
        const uint64_t seed = derive_seed(cfg.sim.seed, seed_tag::kCalibSample,
                                          static_cast<uint64_t>(i));
        const TapSet taps = make_taps(cfg.sim, seed);
        const ComplexGrid p = precode_from_taps(taps, cfg.sim.n_streams);
        return equivalent_from_taps(taps, p);
      },
      cfg.lmmse.calibration_samples, cfg.lmmse.epsilon, threads);
  if (!path.empty()) {
    const std::string tmp = path + ".tmp";
    write_covariance(tmp, cov, key);
    std::filesystem::rename(tmp, path);
  }
  return cov;
}

}  // namespace bimce
