#include "bimce/model.hpp"

namespace bimce {

const char* to_string(Backbone b) { return b == Backbone::kConv ? "conv" : "mixer"; }

const char* to_string(BimPlacement p) {
  switch (p) {
    case BimPlacement::kOff: return "off";
    case BimPlacement::kAll: return "all";
    case BimPlacement::kDenoiseOnly: return "denoise_only";
    case BimPlacement::kExpansionOnly: return "expansion_only";
  }
  return "off";
}

const char* to_string(ActKind a) { return a == ActKind::kRelu ? "relu" : "sigmoid"; }

Backbone backbone_from_string(const std::string& s) {
  if (s == "conv") return Backbone::kConv;
  if (s == "mixer") return Backbone::kMixer;
  throw std::invalid_argument("unknown backbone '" + s + "' (conv|mixer)");
}

BimPlacement placement_from_string(const std::string& s) {
  if (s == "off") return BimPlacement::kOff;
  if (s == "all") return BimPlacement::kAll;
  if (s == "denoise_only") return BimPlacement::kDenoiseOnly;
  if (s == "expansion_only") return BimPlacement::kExpansionOnly;
  throw std::invalid_argument("unknown bim placement '" + s +
                              "' (off|all|denoise_only|expansion_only)");
}

ActKind act_from_string(const std::string& s) {
  if (s == "relu") return ActKind::kRelu;
  if (s == "sigmoid") return ActKind::kSigmoid;
  throw std::invalid_argument("unknown activation '" + s + "' (relu|sigmoid)");
}

void ModelSpec::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("ModelSpec." + what);
  };
  need(channels >= 1, "channels: must be positive");
  need(blocks >= 0, "blocks: must be nonnegative");
  need(n_rx >= 1, "n_rx: must be positive");
  need(n_cp >= 1 && n_lp >= 1, "n_cp/n_lp: must be positive");
  need(n_c >= n_cp, "n_c: full grid narrower than the pilot grid");
  need(n_l >= n_lp, "n_l: full grid shorter than the pilot grid");
  need(bim_hidden >= 0, "bim_hidden: must be nonnegative");
  need(belief_std_db > 0, "belief_std_db: must be positive");
}

}  // namespace bimce
