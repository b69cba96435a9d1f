#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace aura {

enum class ErrorKind {
    MissingField,
    BadLabel,
    EmptyCorpus,
    OneClassOnly,
    BadTokenId,
    ContextOverflow,
    InvalidConfig,
    DivergedLoss,
    BadMagic,
    ShapeMismatch,
    TruncatedPayload,
    DomainError,
    KTooLarge,
    AlphaOutOfRange,
    VarianceIncrease,
    ZeroVariance,
    NeuronOutOfRange,
    EmptySlice,
    IoError,
    ParseError,
};

std::string_view to_string(ErrorKind kind);

// All toolkit failures surface as this exception; `kind()` is the stable,
// machine-readable part, `what()` carries the human detail.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& detail);
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& detail);

// splitmix64 finalizer; also used to derive independent seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

// Small portable generator. The integer paths are bit-exact on every
// platform; gaussian() depends on libm's log/cos.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next_u64() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double gaussian() noexcept;

private:
    std::uint64_t state_;
};

// FNV-1a, 64 bit. Used for content hashes recorded in metadata.
class Hasher {
public:
    Hasher& bytes(const void* data, std::size_t n) noexcept;
    Hasher& str(std::string_view s) noexcept { return bytes(s.data(), s.size()); }
    template <class T>
    Hasher& pod(const T& v) noexcept { return bytes(&v, sizeof(T)); }
    std::uint64_t digest() const noexcept { return h_; }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t v);

// Shortest round-trippable text form is not needed; reports use 9
// significant digits everywhere.
std::string fmt9(double v);

// Writes `contents` to `path` via a temporary sibling and rename.
void write_file_atomic(const std::string& path, std::string_view contents);
std::string read_file(const std::string& path);

}  // namespace aura
