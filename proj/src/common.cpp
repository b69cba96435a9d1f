#include "aura/common.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace aura {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::MissingField: return "MissingField";
        case ErrorKind::BadLabel: return "BadLabel";
        case ErrorKind::EmptyCorpus: return "EmptyCorpus";
        case ErrorKind::OneClassOnly: return "OneClassOnly";
        case ErrorKind::BadTokenId: return "BadTokenId";
        case ErrorKind::ContextOverflow: return "ContextOverflow";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::DivergedLoss: return "DivergedLoss";
        case ErrorKind::BadMagic: return "BadMagic";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::TruncatedPayload: return "TruncatedPayload";
        case ErrorKind::DomainError: return "DomainError";
        case ErrorKind::KTooLarge: return "KTooLarge";
        case ErrorKind::AlphaOutOfRange: return "AlphaOutOfRange";
        case ErrorKind::VarianceIncrease: return "VarianceIncrease";
        case ErrorKind::ZeroVariance: return "ZeroVariance";
        case ErrorKind::NeuronOutOfRange: return "NeuronOutOfRange";
        case ErrorKind::EmptySlice: return "EmptySlice";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::ParseError: return "ParseError";
    }
    return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

void fail(ErrorKind kind, const std::string& detail) { throw Error(kind, detail); }

double Rng::gaussian() noexcept {
    // Box-Muller, one value per call; u1 kept away from zero.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Hasher& Hasher::bytes(const void* data, std::size_t n) noexcept {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h_ ^= p[i];
        h_ *= 0x100000001b3ULL;
    }
    return *this;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string fmt9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void write_file_atomic(const std::string& path, std::string_view contents) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::IoError, "cannot open " + tmp.string() + " for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) fail(ErrorKind::IoError, "write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) fail(ErrorKind::IoError, "rename to " + path + " failed: " + ec.message());
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace aura
