#include "esref/text.hpp"

#include <cctype>

namespace esref {

std::string normalize_text(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

std::vector<std::string> split_words(std::string_view normalized) {
    std::vector<std::string> words;
    size_t start = 0;
    while (start < normalized.size()) {
        size_t end = normalized.find(' ', start);
        if (end == std::string_view::npos) end = normalized.size();
        if (end > start) words.emplace_back(normalized.substr(start, end - start));
        start = end + 1;
    }
    return words;
}

std::vector<std::string> tokenize_words(std::string_view text) {
    return split_words(normalize_text(text));
}

uint64_t fnv1a64(std::string_view bytes, uint64_t state) {
    for (unsigned char c : bytes) {
        state ^= c;
        state *= 0x100000001b3ULL;
    }
    return state;
}

uint64_t fnv1a64(std::string_view bytes) {
    return fnv1a64(bytes, 0xcbf29ce484222325ULL);
}

}  // namespace esref
