#include "bimce/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "bimce/rng.hpp"

namespace bimce {

namespace {

constexpr char kMagic[6] = {'B', 'I', 'M', 'C', 'E', '1'};

uint64_t split_tag(Split s) {
  switch (s) {
    case Split::kTrain: return seed_tag::kTrainSample;
    case Split::kVal: return seed_tag::kValSample;
    case Split::kTest: return seed_tag::kTestSample;
  }
  return seed_tag::kTrainSample;
}

template <typename T>
void put(std::ostream& out, const T& x) {
  out.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

template <typename T>
void get(std::istream& in, T& x, const char* what) {
  in.read(reinterpret_cast<char*>(&x), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T)))
    throw std::runtime_error(std::string("dataset: truncated file while reading ") + what);
}

}  // namespace

uint64_t sample_seed_for(uint64_t master, Split split, int index, double ebno_db) {
  uint64_t base = derive_seed(master, split_tag(split));
  if (split == Split::kTest) {
    uint64_t bits = 0;
    static_assert(sizeof(bits) == sizeof(ebno_db));
    std::memcpy(&bits, &ebno_db, sizeof(bits));
    base = derive_seed(base, seed_tag::kEbno, bits);
  }
  return derive_seed(base, split_tag(split), static_cast<uint64_t>(index));
}

Sample make_sample(const SimConfig& cfg, const PilotPattern& pattern, double ebno_db,
                   uint64_t sample_seed) {
  const TapSet taps = make_taps(cfg, sample_seed);
  const ComplexGrid p = precode_from_taps(taps, cfg.n_streams);
  Sample s;
  s.ebno_db = static_cast<float>(ebno_db);
  s.seed = sample_seed;
  s.g_true = equivalent_from_taps(taps, p);
  const double sigma = ebno_to_noise_var(ebno_db, 2);
  const ComplexGrid y_p = received_pilots(s.g_true, pattern, sigma, sample_seed);
  s.g_ls_p = ls_estimate(y_p, pattern).g_p_hat;
  s.belief_mu = genie_belief(s.g_true, sigma).mu;
  return s;
}

Dataset generate_dataset(const SimConfig& cfg, const PilotPattern& pattern, const GenSpec& spec,
                         uint64_t master_seed, int threads) {
  if (spec.count < 1) throw std::invalid_argument("generate_dataset: count must be at least 1");
  cfg.validate();
  Dataset ds;
  ds.header.n_rx = static_cast<uint32_t>(cfg.n_rx);
  ds.header.n_s = static_cast<uint32_t>(cfg.n_streams);
  ds.header.n_c = static_cast<uint32_t>(cfg.n_subcarriers);
  ds.header.n_l = static_cast<uint32_t>(cfg.n_symbols);
  ds.header.n_cp = static_cast<uint32_t>(pattern.n_cp());
  ds.header.n_lp = static_cast<uint32_t>(pattern.n_lp());
  ds.header.count = static_cast<uint32_t>(spec.count);
  ds.samples.resize(static_cast<size_t>(spec.count));

  auto build = [&](int i) {
    const uint64_t seed = sample_seed_for(master_seed, spec.split, i, spec.fixed_ebno_db);
    double ebno = spec.fixed_ebno_db;
    if (spec.split != Split::kTest) {
      Rng rng(derive_seed(seed, seed_tag::kEbno));
      ebno = rng.uniform(spec.ebno_lo_db, spec.ebno_hi_db);
    }
    ds.samples[static_cast<size_t>(i)] = make_sample(cfg, pattern, ebno, seed);
  };
  threads = std::max(1, threads);
  if (threads == 1) {
    for (int i = 0; i < spec.count; ++i) build(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (int i = w; i < spec.count; i += threads) build(i);
      });
    for (auto& t : pool) t.join();
  }
  return ds;
}

void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("dataset: cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  put(out, ds.header.version);
  put(out, ds.header.n_rx);
  put(out, ds.header.n_s);
  put(out, ds.header.n_c);
  put(out, ds.header.n_l);
  put(out, ds.header.n_cp);
  put(out, ds.header.n_lp);
  put(out, ds.header.count);
  for (const Sample& s : ds.samples) {
    put(out, s.ebno_db);
    put(out, s.seed);
    out.write(reinterpret_cast<const char*>(s.belief_mu.data()),
              static_cast<std::streamsize>(s.belief_mu.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(s.g_true.data()),
              static_cast<std::streamsize>(s.g_true.numel() * sizeof(std::complex<float>)));
    out.write(reinterpret_cast<const char*>(s.g_ls_p.data()),
              static_cast<std::streamsize>(s.g_ls_p.numel() * sizeof(std::complex<float>)));
  }
  if (!out) throw std::runtime_error("dataset: short write to '" + path + "'");
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: cannot open '" + path + "'");
  char magic[6];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw std::runtime_error("dataset: magic mismatch in '" + path + "'");
  Dataset ds;
  get(in, ds.header.version, "version");
  if (ds.header.version != 1)
    throw std::runtime_error("dataset: unsupported version " + std::to_string(ds.header.version));
  get(in, ds.header.n_rx, "n_rx");
  get(in, ds.header.n_s, "n_s");
  get(in, ds.header.n_c, "n_c");
  get(in, ds.header.n_l, "n_l");
  get(in, ds.header.n_cp, "n_cp");
  get(in, ds.header.n_lp, "n_lp");
  get(in, ds.header.count, "count");
  const DatasetHeader& h = ds.header;
  if (h.n_rx == 0 || h.n_s == 0 || h.n_c == 0 || h.n_l == 0 || h.n_cp == 0 || h.n_lp == 0)
    throw std::runtime_error("dataset: malformed header in '" + path + "'");
  ds.samples.resize(h.count);
  for (uint32_t i = 0; i < h.count; ++i) {
    Sample& s = ds.samples[i];
    get(in, s.ebno_db, "ebno_db");
    get(in, s.seed, "seed");
    s.belief_mu.resize(h.n_rx);
    in.read(reinterpret_cast<char*>(s.belief_mu.data()),
            static_cast<std::streamsize>(h.n_rx * sizeof(float)));
    s.g_true = ComplexGrid({static_cast<int>(h.n_rx), static_cast<int>(h.n_s),
                            static_cast<int>(h.n_c), static_cast<int>(h.n_l)});
    in.read(reinterpret_cast<char*>(s.g_true.data()),
            static_cast<std::streamsize>(s.g_true.numel() * sizeof(std::complex<float>)));
    s.g_ls_p = ComplexGrid({static_cast<int>(h.n_rx), static_cast<int>(h.n_s),
                            static_cast<int>(h.n_cp), static_cast<int>(h.n_lp)});
    in.read(reinterpret_cast<char*>(s.g_ls_p.data()),
            static_cast<std::streamsize>(s.g_ls_p.numel() * sizeof(std::complex<float>)));
    if (!in)
      throw std::runtime_error("dataset: header count " + std::to_string(h.count) +
                               " exceeds file payload (truncated at sample " + std::to_string(i) +
                               ")");
  }
  return ds;
}

void fill_planes(std::span<const Sample> samples, std::span<const int> idx, Tensor& planes,
                 Tensor& belief_db) {
  if (samples.empty() || idx.empty()) throw std::invalid_argument("fill_planes: empty batch");
  const Sample& first = samples[static_cast<size_t>(idx[0])];
  if (first.g_ls_p.dim(1) != 1)
    throw std::invalid_argument("fill_planes: training expects a single stream");
  const int n_rx = first.g_ls_p.dim(0), n_cp = first.g_ls_p.dim(2), n_lp = first.g_ls_p.dim(3);
  const int bsz = static_cast<int>(idx.size());
  planes = Tensor({bsz, 2 * n_rx, n_cp, n_lp});
  belief_db = Tensor({bsz, n_rx});
  for (int b = 0; b < bsz; ++b) {
    const Sample& s = samples[static_cast<size_t>(idx[static_cast<size_t>(b)])];
    for (int r = 0; r < n_rx; ++r) {
      belief_db.at(b, r) = 10.f * std::log10(s.belief_mu[static_cast<size_t>(r)]);
      for (int i = 0; i < n_cp; ++i)
        for (int l = 0; l < n_lp; ++l) {
          const std::complex<float> z = s.g_ls_p.at(r, 0, i, l);
          planes.at(b, 2 * r, i, l) = z.real();
          planes.at(b, 2 * r + 1, i, l) = z.imag();
        }
    }
  }
}

void fill_targets(std::span<const Sample> samples, std::span<const int> idx, Tensor& target) {
  if (samples.empty() || idx.empty()) throw std::invalid_argument("fill_targets: empty batch");
  const Sample& first = samples[static_cast<size_t>(idx[0])];
  const int n_rx = first.g_true.dim(0), n_c = first.g_true.dim(2), n_l = first.g_true.dim(3);
  const int bsz = static_cast<int>(idx.size());
  target = Tensor({bsz, 2 * n_rx, n_c, n_l});
  for (int b = 0; b < bsz; ++b) {
    const Sample& s = samples[static_cast<size_t>(idx[static_cast<size_t>(b)])];
    for (int r = 0; r < n_rx; ++r)
      for (int i = 0; i < n_c; ++i)
        for (int l = 0; l < n_l; ++l) {
          const std::complex<float> z = s.g_true.at(r, 0, i, l);
          target.at(b, 2 * r, i, l) = z.real();
          target.at(b, 2 * r + 1, i, l) = z.imag();
        }
  }
}

}  // namespace bimce
