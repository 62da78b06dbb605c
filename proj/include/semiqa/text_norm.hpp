#pragma once
// Text normalization shared by name matching, finish resolution and the
// hashed embedding provider. Normalized form: ASCII case-folded tokens with
// edge punctuation stripped, joined by single spaces. Bytes >= 0x80 are
// treated as letters so UTF-8 names survive untouched.

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace semiqa {

inline bool is_token_letter(unsigned char c) {
    return std::isalnum(c) || c >= 0x80;
}

inline std::vector<std::string> tokenize_normalized(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    auto flush = [&] {
        // strip punctuation at token edges only ("Th." -> "th",
        // "hao-sheng" keeps its interior hyphen)
        std::size_t b = 0, e = cur.size();
        while (b < e && !is_token_letter(static_cast<unsigned char>(cur[b]))) ++b;
        while (e > b && !is_token_letter(static_cast<unsigned char>(cur[e - 1]))) --e;
        if (e > b) tokens.emplace_back(cur.substr(b, e - b));
        cur.clear();
    };
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            flush();
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return tokens;
}

inline std::string normalize_text(std::string_view text) {
    std::string out;
    for (const auto& tok : tokenize_normalized(text)) {
        if (!out.empty()) out.push_back(' ');
        out += tok;
    }
    return out;
}

// Occurrences of `needle` in `haystack` at word boundaries. Both inputs must
// already be normalized.
inline std::vector<std::size_t> find_word_bounded(std::string_view haystack,
                                                  std::string_view needle) {
    std::vector<std::size_t> hits;
    if (needle.empty() || needle.size() > haystack.size()) return hits;
    std::size_t pos = 0;
    while ((pos = haystack.find(needle, pos)) != std::string_view::npos) {
        bool left_ok = pos == 0 || haystack[pos - 1] == ' ';
        std::size_t end = pos + needle.size();
        bool right_ok = end == haystack.size() || haystack[end] == ' ';
        if (left_ok && right_ok) hits.push_back(pos);
        ++pos;
    }
    return hits;
}

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = kFnvOffset) {
    for (unsigned char c : data) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Uniform in [0, 1).
inline double hash_to_unit(std::uint64_t x) {
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace semiqa
