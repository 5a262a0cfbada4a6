#pragma once

#include <stdexcept>
#include <string>

namespace bsdn {

enum class NoiseKind { gaussian, poisson, impulse };

// known: parameter supplied; unknown_fixed: single trainable scalar;
// unknown_variable: per-image estimate from an auxiliary network.
enum class Knownness { known, unknown_fixed, unknown_variable };

// Corruption model. Parameters are expressed in interface units: sigma in
// 8-bit steps (Table-1-style), lambda as a maximum event count, alpha as a
// probability. [p0,p1] is the per-image uniform draw range; p0 == p1 is the
// fixed regime.
struct NoiseSpec {
    NoiseKind kind = NoiseKind::gaussian;
    double p0 = 25.0;
    double p1 = 25.0;
    Knownness known = Knownness::known;

    bool variable() const { return p1 > p0; }

    void validate() const {
        if (p1 < p0) throw std::invalid_argument("noise: range upper bound below lower bound");
        switch (kind) {
            case NoiseKind::gaussian:
            case NoiseKind::poisson:
                if (p0 <= 0.0) throw std::invalid_argument("noise: parameter must be positive");
                break;
            case NoiseKind::impulse:
                if (p0 < 0.0 || p1 > 1.0) throw std::invalid_argument("noise: alpha outside [0,1]");
                break;
        }
    }

    // interface units -> internal units (sigma/255; lambda -> 1/lambda; alpha)
    double to_internal(double v) const {
        switch (kind) {
            case NoiseKind::gaussian: return v / 255.0;
            case NoiseKind::poisson: return 1.0 / v;
            case NoiseKind::impulse: return v;
        }
        return v;
    }
    double from_internal(double v) const {
        switch (kind) {
            case NoiseKind::gaussian: return v * 255.0;
            case NoiseKind::poisson: return 1.0 / v;
            case NoiseKind::impulse: return v;
        }
        return v;
    }
};

inline const char* to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::gaussian: return "gaussian";
        case NoiseKind::poisson: return "poisson";
        case NoiseKind::impulse: return "impulse";
    }
    return "?";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "gaussian") return NoiseKind::gaussian;
    if (s == "poisson") return NoiseKind::poisson;
    if (s == "impulse") return NoiseKind::impulse;
    throw std::invalid_argument("unknown noise kind: " + s);
}

inline const char* to_string(Knownness k) {
    switch (k) {
        case Knownness::known: return "known";
        case Knownness::unknown_fixed: return "unknown-fixed";
        case Knownness::unknown_variable: return "unknown-variable";
    }
    return "?";
}

inline Knownness knownness_from_string(const std::string& s) {
    if (s == "known") return Knownness::known;
    if (s == "unknown-fixed") return Knownness::unknown_fixed;
    if (s == "unknown-variable") return Knownness::unknown_variable;
    throw std::invalid_argument("unknown knownness: " + s);
}

}  // namespace bsdn
