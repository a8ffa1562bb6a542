#include "mmreact/pal_math.hpp"

#include <cctype>

#include <boost/multiprecision/cpp_int.hpp>

#include "mmreact/error.hpp"

namespace mmreact {

namespace {

using boost::multiprecision::cpp_int;
using boost::multiprecision::cpp_rational;

constexpr int kMaxDepth = 256;
constexpr int kSignificantDigits = 10;

enum class Op { none, plus, minus, times, divide, lparen, rparen };

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  cpp_rational parse() {
    auto value = expression(0);
    skip_space();
    if (pos_ != text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    return value;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(Errc::parse_error,
                "math expression: " + what + " at offset " + std::to_string(pos_));
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  // Peeks the next operator token without consuming it; `len` receives its
  // byte length.
  Op peek(std::size_t& len) {
    skip_space();
    len = 1;
    if (pos_ >= text_.size()) return Op::none;
    switch (text_[pos_]) {
      case '+': return Op::plus;
      case '-': return Op::minus;
      case '*': return Op::times;
      case '/': return Op::divide;
      case '(': return Op::lparen;
      case ')': return Op::rparen;
      default: break;
    }
    const auto rest = text_.substr(pos_);
    if (rest.starts_with("\xC3\x97")) return len = 2, Op::times;   // ×
    if (rest.starts_with("\xC3\xB7")) return len = 2, Op::divide;  // ÷
    if (rest.starts_with("\xE2\x88\x92")) return len = 3, Op::minus;  // −
    return Op::none;
  }

  cpp_rational expression(int depth) {
    auto value = term(depth);
    for (;;) {
      std::size_t len = 0;
      const Op op = peek(len);
      if (op != Op::plus && op != Op::minus) return value;
      pos_ += len;
      auto rhs = term(depth);
      if (op == Op::plus) value += rhs;
      else value -= rhs;
    }
  }

  cpp_rational term(int depth) {
    auto value = unary(depth);
    for (;;) {
      std::size_t len = 0;
      const Op op = peek(len);
      if (op != Op::times && op != Op::divide) return value;
      pos_ += len;
      auto rhs = unary(depth);
      if (op == Op::times) {
        value *= rhs;
      } else {
        if (rhs == 0) throw Error(Errc::division_by_zero, "math expression: division by zero");
        value /= rhs;
      }
    }
  }

  cpp_rational unary(int depth) {
    if (depth > kMaxDepth) fail("expression nested too deeply");
    std::size_t len = 0;
    const Op op = peek(len);
    if (op == Op::minus) {
      pos_ += len;
      return -unary(depth + 1);
    }
    if (op == Op::plus) {
      pos_ += len;
      return unary(depth + 1);
    }
    return primary(depth);
  }

  cpp_rational primary(int depth) {
    std::size_t len = 0;
    const Op op = peek(len);
    if (op == Op::lparen) {
      pos_ += len;
      auto value = expression(depth + 1);
      if (peek(len) != Op::rparen) fail("expected ')'");
      pos_ += len;
      return value;
    }
    return number();
  }

  cpp_rational number() {
    skip_space();
    const std::size_t start = pos_;
    cpp_int digits = 0;
    int frac_digits = 0;
    bool any = false;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      digits = digits * 10 + (text_[pos_++] - '0');
      any = true;
    }
    if (pos_ < text_.size() && text_[pos_] == '.') {
      ++pos_;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        digits = digits * 10 + (text_[pos_++] - '0');
        ++frac_digits;
        any = true;
      }
    }
    if (!any) {
      pos_ = start;
      fail(pos_ < text_.size() ? "expected a number" : "unexpected end of expression");
    }
    return cpp_rational(digits, boost::multiprecision::pow(cpp_int(10), frac_digits));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

// Places a decimal point `scale` digits from the right of |n| and trims
// trailing fractional zeros.
std::string decimal_string(const cpp_int& n, int scale) {
  std::string digits = n.str();
  if (scale > 0) {
    if (static_cast<int>(digits.size()) <= scale) {
      digits.insert(0, static_cast<std::size_t>(scale) - digits.size() + 1, '0');
    }
    digits.insert(digits.size() - static_cast<std::size_t>(scale), 1, '.');
    while (digits.back() == '0') digits.pop_back();
    if (digits.back() == '.') digits.pop_back();
  } else if (scale < 0) {
    digits.append(static_cast<std::size_t>(-scale), '0');
  }
  return digits;
}

cpp_int pow10(int e) { return boost::multiprecision::pow(cpp_int(10), e); }

std::string render(const cpp_rational& value) {
  if (value == 0) return "0";
  const bool negative = value < 0;
  const cpp_rational magnitude = negative ? cpp_rational(-value) : value;
  const cpp_int num = boost::multiprecision::numerator(magnitude);
  const cpp_int den = boost::multiprecision::denominator(magnitude);

  std::string body;
  cpp_int rest = den;
  int twos = 0;
  int fives = 0;
  while (rest % 2 == 0) rest /= 2, ++twos;
  while (rest % 5 == 0) rest /= 5, ++fives;
  if (rest == 1) {
    const int scale = std::max(twos, fives);
    body = decimal_string(num * (pow10(scale) / den), scale);
  } else {
    // 10^e <= magnitude < 10^(e+1)
    int e = static_cast<int>(num.str().size()) - static_cast<int>(den.str().size());
    auto at_least = [&](int exp) {
      return exp >= 0 ? num >= den * pow10(exp) : num * pow10(-exp) >= den;
    };
    while (!at_least(e)) --e;
    while (at_least(e + 1)) ++e;

    const int shift = kSignificantDigits - 1 - e;
    cpp_int scaled_num = shift >= 0 ? num * pow10(shift) : num;
    cpp_int scaled_den = shift >= 0 ? den : den * pow10(-shift);
    cpp_int q = scaled_num / scaled_den;
    const cpp_int r = scaled_num % scaled_den;
    if (r * 2 >= scaled_den) ++q;
    body = decimal_string(q, shift);
  }
  return negative ? "-" + body : body;
}

}  // namespace

std::string eval_math(std::string_view expression) {
  Parser parser(expression);
  return render(parser.parse());
}

}  // namespace mmreact
