#include "qrt/decoder.hpp"

namespace qrt::decoder {

namespace {
// index 0..44; blank (45) has no character
constexpr char kPunct[] = {' ', '\'', '-', '.', ',', '?', '!', ':', ';'};
}  // namespace

char symbol_char(long symbol) {
  require(symbol >= 0 && symbol < kBlank, ErrorCode::validate,
          "symbol " + std::to_string(symbol) + " is not a label");
  if (symbol < 26) return static_cast<char>('a' + symbol);
  if (symbol < 36) return static_cast<char>('0' + (symbol - 26));
  return kPunct[symbol - 36];
}

long char_symbol(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= '0' && c <= '9') return 26 + (c - '0');
  for (long i = 0; i < 9; ++i)
    if (kPunct[i] == c) return 36 + i;
  return -1;
}

std::string labels_to_text(const std::vector<long>& labels) {
  std::string out;
  out.reserve(labels.size());
  for (long s : labels) out.push_back(symbol_char(s));
  return out;
}

std::vector<long> text_to_labels(const std::string& text) {
  std::vector<long> out;
  out.reserve(text.size());
  for (char c : text) {
    long s = char_symbol(c);
    require(s >= 0, ErrorCode::validate, std::string("character '") + c + "' has no symbol");
    out.push_back(s);
  }
  return out;
}

}  // namespace qrt::decoder
