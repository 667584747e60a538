#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace personakit::text {

struct CodePoint {
    char32_t value;
    std::size_t length;  // bytes consumed; malformed input decodes to U+FFFD with length 1
};

CodePoint decode_at(std::string_view s, std::size_t pos);
std::vector<char32_t> decode_utf8(std::string_view s);
void append_utf8(std::string& out, char32_t cp);

bool is_cjk(char32_t cp);
bool is_space(char32_t cp);
// Punctuation that separates words without being part of one (CJK and general punctuation blocks).
bool is_separator_punct(char32_t cp);

// Byte range [begin, end) of one countable word.
struct WordSpan {
    std::size_t begin;
    std::size_t end;
};

// Counting rule: every CJK character is one word; every maximal run of other
// non-space, non-separator characters is one word. Latin text therefore counts
// whitespace-delimited tokens and mixed text applies both rules per script run.
std::vector<WordSpan> word_spans(std::string_view s);
std::size_t count_words(std::string_view s);

// Prefix of `s` holding its first `n` counted words (head truncation).
std::string truncate_words(std::string_view s, std::size_t n);

std::string_view trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);

}  // namespace personakit::text
