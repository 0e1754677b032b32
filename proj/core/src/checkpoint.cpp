#include "bimce/checkpoint.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bimce {

namespace {

constexpr const char* kMagic = "BIMCKPT";
constexpr int kVersion = 1;

std::string fmt_float(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, x);
  return buf;
}

}  // namespace

Checkpoint snapshot(const Model& model, const CheckpointMeta& meta) {
  Checkpoint ck;
  ck.spec = model.spec();
  ck.meta = meta;
  for (const auto& p : model.params()) ck.tensors.emplace_back(p.name, p.value);
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ostringstream head;
  const ModelSpec& s = ck.spec;
  head << kMagic << ' ' << kVersion << '\n'
       << "backbone " << to_string(s.backbone) << '\n'
       << "placement " << to_string(s.placement) << '\n'
       << "channels " << s.channels << '\n'
       << "blocks " << s.blocks << '\n'
       << "n_rx " << s.n_rx << '\n'
       << "n_cp " << s.n_cp << '\n'
       << "n_lp " << s.n_lp << '\n'
       << "n_c " << s.n_c << '\n'
       << "n_l " << s.n_l << '\n'
       << "bim_hidden " << s.bim_hidden << '\n'
       << "bim_inner " << to_string(s.bim_inner) << '\n'
       << "bim_outer " << to_string(s.bim_outer) << '\n'
       << "belief_mean_db " << fmt_float(s.belief_mean_db, 9) << '\n'
       << "belief_std_db " << fmt_float(s.belief_std_db, 9) << '\n'
       << "mixer_token_hidden " << s.mixer_token_hidden << '\n'
       << "mixer_channel_hidden " << s.mixer_channel_hidden << '\n'
       << "meta_seed " << ck.meta.seed << '\n'
       << "meta_epochs " << ck.meta.epochs << '\n'
       << "meta_best_val_nmse_db " << fmt_float(ck.meta.best_val_nmse_db, 17) << '\n';
  int64_t offset = 0;
  for (const auto& [name, t] : ck.tensors) {
    head << "tensor " << name << ' ' << t.rank();
    for (int d : t.shape) head << ' ' << d;
    const int64_t bytes = t.numel() * static_cast<int64_t>(sizeof(float));
    head << ' ' << offset << ' ' << bytes << '\n';
    offset += bytes;
  }
  head << "blob " << offset << '\n';

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  const std::string h = head.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, t] : ck.tensors)
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!out) throw std::runtime_error("checkpoint: short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint: empty file '" + path + "'");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = -1;
    ls >> magic >> version;
    if (magic != kMagic)
      throw std::runtime_error("checkpoint: magic mismatch in '" + path + "' (got '" + magic +
                               "')");
    if (version != kVersion)
      throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  struct TensorDecl {
    std::string name;
    std::vector<int> shape;
    int64_t offset, bytes;
  };
  std::vector<TensorDecl> decls;
  int64_t blob_bytes = -1;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "blob") {
      ls >> blob_bytes;
      break;
    } else if (key == "tensor") {
      TensorDecl d;
      int rank = 0;
      ls >> d.name >> rank;
      d.shape.resize(static_cast<size_t>(rank));
      for (int& x : d.shape) ls >> x;
      ls >> d.offset >> d.bytes;
      if (!ls) throw std::runtime_error("checkpoint: malformed tensor line: " + line);
      decls.push_back(std::move(d));
    } else if (key == "backbone") {
      std::string v;
      ls >> v;
      ck.spec.backbone = backbone_from_string(v);
    } else if (key == "placement") {
      std::string v;
      ls >> v;
      ck.spec.placement = placement_from_string(v);
    } else if (key == "bim_inner" || key == "bim_outer") {
      std::string v;
      ls >> v;
      (key == "bim_inner" ? ck.spec.bim_inner : ck.spec.bim_outer) = act_from_string(v);
    } else if (key == "channels") {
      ls >> ck.spec.channels;
    } else if (key == "blocks") {
      ls >> ck.spec.blocks;
    } else if (key == "n_rx") {
      ls >> ck.spec.n_rx;
    } else if (key == "n_cp") {
      ls >> ck.spec.n_cp;
    } else if (key == "n_lp") {
      ls >> ck.spec.n_lp;
    } else if (key == "n_c") {
      ls >> ck.spec.n_c;
    } else if (key == "n_l") {
      ls >> ck.spec.n_l;
    } else if (key == "bim_hidden") {
      ls >> ck.spec.bim_hidden;
    } else if (key == "belief_mean_db") {
      ls >> ck.spec.belief_mean_db;
    } else if (key == "belief_std_db") {
      ls >> ck.spec.belief_std_db;
    } else if (key == "mixer_token_hidden") {
      ls >> ck.spec.mixer_token_hidden;
    } else if (key == "mixer_channel_hidden") {
      ls >> ck.spec.mixer_channel_hidden;
    } else if (key == "meta_seed") {
      ls >> ck.meta.seed;
    } else if (key == "meta_epochs") {
      ls >> ck.meta.epochs;
    } else if (key == "meta_best_val_nmse_db") {
      ls >> ck.meta.best_val_nmse_db;
    } else {
      throw std::runtime_error("checkpoint: unknown manifest key '" + key + "'");
    }
  }
  if (blob_bytes < 0) throw std::runtime_error("checkpoint: missing blob header in '" + path + "'");
  std::vector<char> blob(static_cast<size_t>(blob_bytes));
  in.read(blob.data(), blob_bytes);
  if (in.gcount() != blob_bytes)
    throw std::runtime_error("checkpoint: truncated blob in '" + path + "' (expected " +
                             std::to_string(blob_bytes) + " bytes, got " +
                             std::to_string(in.gcount()) + ")");
  for (const auto& d : decls) {
    Tensor t(d.shape);
    if (t.numel() * static_cast<int64_t>(sizeof(float)) != d.bytes ||
        d.offset + d.bytes > blob_bytes)
      throw std::runtime_error("checkpoint: tensor '" + d.name + "' disagrees with blob layout");
    std::memcpy(t.data(), blob.data() + d.offset, static_cast<size_t>(d.bytes));
    ck.tensors.emplace_back(d.name, std::move(t));
  }
  return ck;
}

Model model_from_checkpoint(const Checkpoint& ck) {
  Model model(ck.spec, /*init_seed=*/0);
  size_t matched = 0;
  for (const auto& [name, t] : ck.tensors) {
    ParamT<float>& p = model.param(name);  // throws on unknown name
    if (!p.value.same_shape(t))
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file " +
                               shape_str(t.shape) + " vs spec " + shape_str(p.value.shape));
    p.value = t;
    ++matched;
  }
  if (matched != model.params().size())
    throw std::runtime_error("checkpoint: " + std::to_string(model.params().size() - matched) +
                             " spec parameters missing from file");
  return model;
}

}  // namespace bimce
