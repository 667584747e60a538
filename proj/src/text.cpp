#include "personakit/text.hpp"

#include <cctype>

namespace personakit::text {

CodePoint decode_at(std::string_view s, std::size_t pos) {
    const auto b0 = static_cast<unsigned char>(s[pos]);
    if (b0 < 0x80) return {b0, 1};

    std::size_t len = 0;
    char32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        return {0xFFFD, 1};
    }
    if (pos + len > s.size()) return {0xFFFD, 1};
    for (std::size_t i = 1; i < len; ++i) {
        const auto b = static_cast<unsigned char>(s[pos + i]);
        if ((b & 0xC0) != 0x80) return {0xFFFD, 1};
        cp = (cp << 6) | (b & 0x3F);
    }
    return {cp, len};
}

std::vector<char32_t> decode_utf8(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    for (std::size_t pos = 0; pos < s.size();) {
        const auto cp = decode_at(s, pos);
        out.push_back(cp.value);
        pos += cp.length;
    }
    return out;
}

void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

bool is_cjk(char32_t cp) {
    return (cp >= 0x4E00 && cp <= 0x9FFF)      // unified ideographs
           || (cp >= 0x3400 && cp <= 0x4DBF)   // extension A
           || (cp >= 0x20000 && cp <= 0x2EBEF) // extensions B-F
           || (cp >= 0xF900 && cp <= 0xFAFF)   // compatibility ideographs
           || (cp >= 0x3040 && cp <= 0x30FF)   // kana
           || (cp >= 0xAC00 && cp <= 0xD7AF);  // hangul syllables
}

bool is_space(char32_t cp) {
    return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\v' || cp == '\f' ||
           cp == 0x85 || cp == 0xA0 || cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200A) ||
           cp == 0x2028 || cp == 0x2029 || cp == 0x202F || cp == 0x205F || cp == 0x3000;
}

bool is_separator_punct(char32_t cp) {
    return (cp >= 0x3001 && cp <= 0x303F)      // CJK symbols and punctuation
           || (cp >= 0x2010 && cp <= 0x205E)   // general punctuation
           || (cp >= 0xFF01 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20) ||
           (cp >= 0xFF3B && cp <= 0xFF40) || (cp >= 0xFF5B && cp <= 0xFF65);
}

std::vector<WordSpan> word_spans(std::string_view s) {
    std::vector<WordSpan> spans;
    bool in_run = false;
    std::size_t run_begin = 0;
    std::size_t pos = 0;
    while (pos < s.size()) {
        const auto cp = decode_at(s, pos);
        const bool boundary = is_space(cp.value) || is_separator_punct(cp.value);
        if (boundary || is_cjk(cp.value)) {
            if (in_run) {
                spans.push_back({run_begin, pos});
                in_run = false;
            }
            if (!boundary) spans.push_back({pos, pos + cp.length});
        } else if (!in_run) {
            in_run = true;
            run_begin = pos;
        }
        pos += cp.length;
    }
    if (in_run) spans.push_back({run_begin, s.size()});
    return spans;
}

std::size_t count_words(std::string_view s) { return word_spans(s).size(); }

std::string truncate_words(std::string_view s, std::size_t n) {
    if (n == 0) return {};
    const auto spans = word_spans(s);
    if (n >= spans.size()) return std::string(s);
    return std::string(s.substr(0, spans[n - 1].end));
}

std::string_view trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string to_lower_ascii(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

}  // namespace personakit::text
