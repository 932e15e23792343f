#pragma once

#include <string>

#include "xdc/error.hpp"

namespace xdc {

/// Pseudo-label routing regimes. The two same-modality variants run two
/// encoders on one input modality and route labels exactly like xdc.
enum class Regime { sdc, mdc, cdc, xdc, xdc_same_visual, xdc_same_audio };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::sdc: return "sdc";
    case Regime::mdc: return "mdc";
    case Regime::cdc: return "cdc";
    case Regime::xdc: return "xdc";
    case Regime::xdc_same_visual: return "xdc-same-visual";
    case Regime::xdc_same_audio: return "xdc-same-audio";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "sdc") return Regime::sdc;
  if (s == "mdc") return Regime::mdc;
  if (s == "cdc") return Regime::cdc;
  if (s == "xdc") return Regime::xdc;
  if (s == "xdc-same-visual" || s == "xdc_same_visual") return Regime::xdc_same_visual;
  if (s == "xdc-same-audio" || s == "xdc_same_audio") return Regime::xdc_same_audio;
  throw ConfigError("unknown regime '" + s + "'");
}

inline bool is_same_modality_variant(Regime r) {
  return r == Regime::xdc_same_visual || r == Regime::xdc_same_audio;
}

/// The label routing applied by the same-modality variants is xdc's.
inline Regime routing_regime(Regime r) {
  return is_same_modality_variant(r) ? Regime::xdc : r;
}

inline int heads_per_encoder(Regime r) { return r == Regime::mdc ? 2 : 1; }

}  // namespace xdc
