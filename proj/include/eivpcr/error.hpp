#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace eivpcr {

enum class Errc {
  AllMissing,
  NonFinite,
  NoConverge,
  RankOutOfRange,
  ShapeMismatch,
  DegenerateSpectrum,
  EmptySpectrum,
  AllZero,
  TargetMissingPre,
  BadShape,
  BadParam,
  Ragged,
  ParseError,
  UnknownUnit,
  SchemaMismatch,
  CorruptModel,
  Io,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::AllMissing: return "AllMissing";
    case Errc::NonFinite: return "NonFinite";
    case Errc::NoConverge: return "NoConverge";
    case Errc::RankOutOfRange: return "RankOutOfRange";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::DegenerateSpectrum: return "DegenerateSpectrum";
    case Errc::EmptySpectrum: return "EmptySpectrum";
    case Errc::AllZero: return "AllZero";
    case Errc::TargetMissingPre: return "TargetMissingPre";
    case Errc::BadShape: return "BadShape";
    case Errc::BadParam: return "BadParam";
    case Errc::Ragged: return "Ragged";
    case Errc::ParseError: return "ParseError";
    case Errc::UnknownUnit: return "UnknownUnit";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::CorruptModel: return "CorruptModel";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// True for failures of the numerical pipeline itself (as opposed to bad
/// input). The CLI maps these to exit code 3.
constexpr bool is_numerical(Errc code) noexcept {
  return code == Errc::DegenerateSpectrum || code == Errc::NoConverge ||
         code == Errc::AllZero || code == Errc::EmptySpectrum;
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace eivpcr
