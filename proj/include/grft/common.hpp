#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace grft {

// Error taxonomy, mirrored by the CLI exit codes.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DependencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic RNG. All draws go through explicit bit-level constructions so
// results do not depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // standard normal via Box-Muller, one cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) {
        if (n == 0) throw ValidationError("Rng::below: n must be positive");
        // rejection sampling keeps the draw unbiased
        const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % n;
        uint64_t v = gen_();
        while (v >= limit) v = gen_();
        return v % n;
    }

    uint64_t raw() { return gen_(); }

    // Fisher-Yates shuffle with fixed traversal order
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Mixes a stream tag into a seed so substages draw from independent streams.
inline uint64_t derive_seed(uint64_t seed, uint64_t tag) {
    uint64_t x = seed ^ (0x9e3779b97f4a7c15ull + tag * 0xbf58476d1ce4e5b9ull);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

// lowercase, strip punctuation, collapse whitespace
inline std::string normalize_text(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            if (pending_space && !out.empty()) out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(u)));
        } else if (std::isspace(u) || std::ispunct(u)) {
            pending_space = true;
        }
    }
    return out;
}

// containment of normalized needle in normalized haystack (word-boundary safe
// via the space-joined normal form)
inline bool contains_normalized(const std::string& haystack, const std::string& needle) {
    const std::string h = " " + normalize_text(haystack) + " ";
    const std::string n = " " + normalize_text(needle) + " ";
    return h.find(n) != std::string::npos;
}

}  // namespace grft
