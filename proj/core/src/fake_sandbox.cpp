#include "pvrl/fake_sandbox.hpp"

#include "pvrl/media.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numbers>
#include <optional>
#include <thread>

namespace pvrl {

namespace {

struct Value;
using ValueList = std::vector<Value>;

struct Value {
    enum class Kind { None, Bool, Int, Float, Str, List, Tuple, Range, Slice, Module, Builtin, Method, Image, Video, Frame, Figure, Opaque };
    Kind kind = Kind::None;
    bool b = false;
    std::int64_t i = 0;
    double f = 0.0;
    std::string s;
    std::shared_ptr<ValueList> items;
    int w = 0;
    int h = 0;
    std::optional<std::int64_t> lo, hi, step;

    static Value none() { return {}; }
    static Value boolean(bool v)
    {
        Value x;
        x.kind = Kind::Bool;
        x.b = v;
        return x;
    }
    static Value integer(std::int64_t v)
    {
        Value x;
        x.kind = Kind::Int;
        x.i = v;
        return x;
    }
    static Value real(double v)
    {
        Value x;
        x.kind = Kind::Float;
        x.f = v;
        return x;
    }
    static Value str(std::string v)
    {
        Value x;
        x.kind = Kind::Str;
        x.s = std::move(v);
        return x;
    }
    static Value seq(Kind k, ValueList v)
    {
        Value x;
        x.kind = k;
        x.items = std::make_shared<ValueList>(std::move(v));
        return x;
    }
    static Value named(Kind k, std::string name)
    {
        Value x;
        x.kind = k;
        x.s = std::move(name);
        return x;
    }
    static Value image(Kind k, int w, int h)
    {
        Value x;
        x.kind = k;
        x.w = w;
        x.h = h;
        return x;
    }
    static Value opaque() { return named(Kind::Opaque, {}); }
    static Value method(std::string name, Value self)
    {
        auto x = named(Kind::Method, std::move(name));
        x.items = std::make_shared<ValueList>(ValueList{std::move(self)});
        return x;
    }
};

using K = Value::Kind;

struct PyException {
    std::string type;
    std::string message;
};
struct BreakSignal {};
struct ContinueSignal {};

const char* type_name(const Value& v)
{
    switch (v.kind) {
    case K::None: return "NoneType";
    case K::Bool: return "bool";
    case K::Int: return "int";
    case K::Float: return "float";
    case K::Str: return "str";
    case K::List: return "list";
    case K::Tuple: return "tuple";
    case K::Range: return "range";
    case K::Slice: return "slice";
    case K::Module: return "module";
    case K::Builtin:
    case K::Method: return "builtin_function_or_method";
    case K::Image: return "Image";
    case K::Video: return "VideoReader";
    case K::Frame: return "NDArray";
    case K::Figure: return "Figure";
    case K::Opaque: return "object";
    }
    return "object";
}

std::string float_repr(double d)
{
    if (std::isnan(d)) return "nan";
    if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
    auto s = fmt::format("{}", d);
    if (s.find_first_of(".eE") == std::string::npos) s += ".0";
    return s;
}

std::string repr(const Value& v);

std::string str(const Value& v)
{
    switch (v.kind) {
    case K::None: return "None";
    case K::Bool: return v.b ? "True" : "False";
    case K::Int: return std::to_string(v.i);
    case K::Float: return float_repr(v.f);
    case K::Str: return v.s;
    case K::List:
    case K::Tuple: {
        std::string out = v.kind == K::List ? "[" : "(";
        for (std::size_t k = 0; k < v.items->size(); ++k) {
            if (k) out += ", ";
            out += repr((*v.items)[k]);
        }
        if (v.kind == K::Tuple && v.items->size() == 1) out += ",";
        out += v.kind == K::List ? "]" : ")";
        return out;
    }
    case K::Range:
        return v.step.value_or(1) == 1 ? fmt::format("range({}, {})", v.i, *v.lo)
                                       : fmt::format("range({}, {}, {})", v.i, *v.lo, *v.step);
    case K::Slice: return "slice(...)";
    case K::Module: return fmt::format("<module '{}'>", v.s);
    case K::Builtin:
    case K::Method: return fmt::format("<built-in function {}>", v.s);
    case K::Image: return fmt::format("<PIL.Image.Image image mode=RGB size={}x{}>", v.w, v.h);
    case K::Video: return "<decord.video_reader.VideoReader object>";
    case K::Frame: return "<decord.ndarray.NDArray>";
    case K::Figure: return fmt::format("Figure({}x{})", v.w, v.h);
    case K::Opaque: return "<object>";
    }
    return "<object>";
}

std::string repr(const Value& v)
{
    if (v.kind != K::Str) return str(v);
    const char quote = v.s.find('\'') != std::string::npos && v.s.find('"') == std::string::npos ? '"' : '\'';
    std::string out(1, quote);
    for (char c : v.s) {
        switch (c) {
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        case '\\': out += "\\\\"; break;
        default:
            if (c == quote) out += '\\';
            out += c;
        }
    }
    out += quote;
    return out;
}

bool truthy(const Value& v)
{
    switch (v.kind) {
    case K::None: return false;
    case K::Bool: return v.b;
    case K::Int: return v.i != 0;
    case K::Float: return v.f != 0.0;
    case K::Str: return !v.s.empty();
    case K::List:
    case K::Tuple: return !v.items->empty();
    default: return true;
    }
}

bool is_number(const Value& v)
{
    return v.kind == K::Int || v.kind == K::Float || v.kind == K::Bool;
}
double as_double(const Value& v)
{
    return v.kind == K::Float ? v.f : v.kind == K::Bool ? double(v.b) : double(v.i);
}
bool is_integral(const Value& v)
{
    return v.kind == K::Int || v.kind == K::Bool;
}
std::int64_t as_int(const Value& v)
{
    return v.kind == K::Bool ? std::int64_t(v.b) : v.i;
}

std::int64_t require_int(const Value& v, std::string_view what)
{
    if (!is_integral(v))
        throw PyException{"TypeError", fmt::format("'{}' object cannot be interpreted as an integer ({})", type_name(v), what)};
    return as_int(v);
}

// --- tokens -------------------------------------------------------------------------

enum class Tok { Num, Str, FStr, Name, Op, End };

struct Token {
    Tok type;
    std::string text;
};

bool name_start(char c)
{
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}
bool name_char(char c)
{
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

std::vector<Token> tokenize(std::string_view src)
{
    static const char* const kOps[] = {"**=", "//=", "**", "//", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "->"};
    std::vector<Token> out;
    std::size_t p = 0;
    while (p < src.size()) {
        const char c = src[p];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\\') {
            ++p;
            continue;
        }
        if (c == '#') break;
        // string literal, with optional prefix
        std::size_t q = p;
        bool raw = false, fstr = false;
        while (q < src.size() && q - p < 2 && std::strchr("rRbBfFuU", src[q]) && src[q] != '\0') {
            if (src[q] == 'r' || src[q] == 'R') raw = true;
            if (src[q] == 'f' || src[q] == 'F') fstr = true;
            ++q;
        }
        if (q < src.size() && (src[q] == '\'' || src[q] == '"') && (q == p || name_start(src[p]))) {
            const char quote = src[q];
            const bool triple = src.substr(q, 3) == std::string(3, quote);
            std::size_t r = q + (triple ? 3 : 1);
            std::string text;
            while (true) {
                if (r >= src.size()) throw PyException{"SyntaxError", "unterminated string literal"};
                if (triple ? src.substr(r, 3) == std::string(3, quote) : src[r] == quote) break;
                if (src[r] == '\\' && !raw && r + 1 < src.size()) {
                    const char e = src[r + 1];
                    switch (e) {
                    case 'n': text += '\n'; break;
                    case 't': text += '\t'; break;
                    case 'r': text += '\r'; break;
                    case '0': text += '\0'; break;
                    case '\\': text += '\\'; break;
                    case '\'': text += '\''; break;
                    case '"': text += '"'; break;
                    case '\n': break;
                    default:
                        text += '\\';
                        text += e;
                    }
                    r += 2;
                    continue;
                }
                text += src[r++];
            }
            out.push_back({fstr ? Tok::FStr : Tok::Str, std::move(text)});
            p = r + (triple ? 3 : 1);
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && p + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[p + 1])))) {
            std::size_t r = p;
            while (r < src.size() && (std::isalnum(static_cast<unsigned char>(src[r])) || src[r] == '.' || src[r] == '_' ||
                                      ((src[r] == '+' || src[r] == '-') && (src[r - 1] == 'e' || src[r - 1] == 'E'))))
                ++r;
            out.push_back({Tok::Num, std::string(src.substr(p, r - p))});
            p = r;
            continue;
        }
        if (name_start(c)) {
            std::size_t r = p;
            while (r < src.size() && name_char(src[r])) ++r;
            out.push_back({Tok::Name, std::string(src.substr(p, r - p))});
            p = r;
            continue;
        }
        bool matched = false;
        for (const char* op : kOps) {
            const std::string_view o(op);
            if (src.substr(p, o.size()) == o) {
                out.push_back({Tok::Op, std::string(o)});
                p += o.size();
                matched = true;
                break;
            }
        }
        if (matched) continue;
        if (std::strchr("+-*/%()[]{},:.=<>@&|^~;!", c)) {
            out.push_back({Tok::Op, std::string(1, c)});
            ++p;
            continue;
        }
        throw PyException{"SyntaxError", fmt::format("invalid character '{}'", c)};
    }
    out.push_back({Tok::End, {}});
    return out;
}

// --- statements ---------------------------------------------------------------------

struct Stmt {
    int line = 0;
    std::string text;
    std::vector<Stmt> body;
    std::vector<Stmt> orelse;
};

struct LogicalLine {
    int line;
    int indent;
    std::string text;
};

// Joins physical lines while brackets are open; drops blank and comment-only lines.
std::vector<LogicalLine> logical_lines(std::string_view code)
{
    std::vector<LogicalLine> out;
    std::string current;
    int depth = 0;
    int start_line = 0, indent = 0;
    int line_no = 0;
    char in_quote = 0;
    bool triple = false;
    std::size_t p = 0;
    while (p <= code.size()) {
        const auto nl = code.find('\n', p);
        const auto raw = code.substr(p, nl == std::string_view::npos ? std::string_view::npos : nl - p);
        ++line_no;
        p = nl == std::string_view::npos ? code.size() + 1 : nl + 1;
        if (current.empty() && depth == 0 && !in_quote) {
            std::size_t lead = 0;
            int width = 0;
            while (lead < raw.size() && (raw[lead] == ' ' || raw[lead] == '\t')) {
                width = raw[lead] == '\t' ? (width / 8 + 1) * 8 : width + 1;
                ++lead;
            }
            if (lead == raw.size() || raw[lead] == '#' || raw[lead] == '\r') continue;
            start_line = line_no;
            indent = width;
            current = std::string(raw.substr(lead));
        } else {
            current += '\n';
            current += raw;
        }
        for (std::size_t k = 0; k < raw.size(); ++k) {
            const char c = raw[k];
            if (in_quote) {
                if (c == '\\') {
                    ++k;
                } else if (c == in_quote && (!triple || raw.substr(k, 3) == std::string(3, c))) {
                    if (triple) k += 2;
                    in_quote = 0;
                }
                continue;
            }
            if (c == '#') break;
            if (c == '\'' || c == '"') {
                triple = raw.substr(k, 3) == std::string(3, c);
                in_quote = c;
                if (triple) k += 2;
            } else if (c == '(' || c == '[' || c == '{') {
                ++depth;
            } else if (c == ')' || c == ']' || c == '}') {
                depth = std::max(0, depth - 1);
            }
        }
        if (in_quote && !triple) in_quote = 0; // unterminated single-line string; tokenizer reports it
        const bool continued = !current.empty() && current.back() == '\\';
        if (depth == 0 && !in_quote && !continued) {
            out.push_back({start_line, indent, std::move(current)});
            current.clear();
        }
    }
    if (!current.empty()) out.push_back({start_line, indent, std::move(current)});
    return out;
}

bool starts_with_word(std::string_view text, std::string_view word)
{
    return text.substr(0, word.size()) == word &&
           (text.size() == word.size() || !name_char(text[word.size()]));
}

bool is_compound(std::string_view text)
{
    for (auto w : {"for", "while", "if", "elif", "else", "def", "with", "try", "except", "finally", "class"})
        if (starts_with_word(text, w)) return true;
    return false;
}

// Position of the colon that ends a compound header, ignoring brackets, strings, lambdas.
std::size_t header_colon(std::string_view text)
{
    int depth = 0;
    char quote = 0;
    for (std::size_t k = 0; k < text.size(); ++k) {
        const char c = text[k];
        if (quote) {
            if (c == '\\') ++k;
            else if (c == quote) quote = 0;
            continue;
        }
        if (c == '\'' || c == '"') quote = c;
        else if (c == '(' || c == '[' || c == '{') ++depth;
        else if (c == ')' || c == ']' || c == '}') --depth;
        else if (c == ':' && depth == 0) return k;
    }
    return std::string_view::npos;
}

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<Stmt> build_block(const std::vector<LogicalLine>& lines, std::size_t& idx, int indent)
{
    std::vector<Stmt> block;
    while (idx < lines.size() && lines[idx].indent >= indent) {
        const auto& ll = lines[idx];
        if (ll.indent > indent) throw PyException{"IndentationError", "unexpected indent"};
        Stmt st{ll.line, ll.text, {}, {}};
        ++idx;
        if (is_compound(ll.text)) {
            const auto colon = header_colon(ll.text);
            if (colon == std::string_view::npos) throw PyException{"SyntaxError", "expected ':'"};
            st.text = trim(std::string_view(ll.text).substr(0, colon));
            const auto inline_body = trim(std::string_view(ll.text).substr(colon + 1));
            if (!inline_body.empty()) {
                // simple statements separated by ';' on the header line
                std::size_t start = 0;
                for (std::size_t k = 0; k <= inline_body.size(); ++k)
                    if (k == inline_body.size() || inline_body[k] == ';') {
                        auto piece = trim(std::string_view(inline_body).substr(start, k - start));
                        if (!piece.empty()) st.body.push_back(Stmt{ll.line, std::move(piece), {}, {}});
                        start = k + 1;
                    }
            } else {
                if (idx >= lines.size() || lines[idx].indent <= indent)
                    throw PyException{"IndentationError", "expected an indented block"};
                st.body = build_block(lines, idx, lines[idx].indent);
            }
            const bool is_continuation = starts_with_word(st.text, "elif") || starts_with_word(st.text, "else") ||
                                         starts_with_word(st.text, "except") || starts_with_word(st.text, "finally");
            if (is_continuation) {
                if (block.empty()) throw PyException{"SyntaxError", "invalid syntax"};
                // attach to the innermost open chain of the previous statement
                Stmt* owner = &block.back();
                while (!owner->orelse.empty() && starts_with_word(owner->orelse.front().text, "elif"))
                    owner = &owner->orelse.front();
                owner->orelse.push_back(std::move(st));
                continue;
            }
        }
        block.push_back(std::move(st));
    }
    return block;
}

// --- execution ----------------------------------------------------------------------

struct ExecContext {
    ExecContext(std::map<std::string, Value>& n, const FakeSandboxOptions& o, const SessionCaps& c, std::int64_t timeout)
        : ns(n), opt(o), caps(c), real_start(std::chrono::steady_clock::now()), timeout_ms(timeout)
    {
    }

    std::map<std::string, Value>& ns;
    const FakeSandboxOptions& opt;
    const SessionCaps& caps;
    std::chrono::steady_clock::time_point real_start;
    std::int64_t timeout_ms;
    std::int64_t elapsed_ms = 0;
    int line = 0;
    std::string out;
    std::vector<RenderedImage> images;
    bool hook = false;
    std::optional<PixelSize> figure;
    int rendered = 0;
    bool process_exit = false;
};

[[noreturn]] void time_out(ExecContext& ex)
{
    if (ex.opt.real_time) std::this_thread::sleep_until(ex.real_start + std::chrono::milliseconds(ex.timeout_ms));
    throw SandboxError(SandboxErrorKind::Timeout, fmt::format("execution exceeded {} ms", ex.timeout_ms));
}

void tick(ExecContext& ex, std::int64_t ms = 1)
{
    ex.elapsed_ms += ms;
    if (ex.elapsed_ms > ex.timeout_ms) time_out(ex);
}

void write_out(ExecContext& ex, std::string_view text)
{
    const auto room = ex.caps.max_stdout_bytes > ex.out.size() ? ex.caps.max_stdout_bytes - ex.out.size() : 0;
    ex.out.append(text.substr(0, std::min(room, text.size())));
}

void ensure_figure(ExecContext& ex)
{
    if (!ex.figure) ex.figure = PixelSize{640, 480};
}

void show_figure(ExecContext& ex)
{
    ex.hook = true;
    if (!ex.figure) return;
    const auto [w, h] = *ex.figure;
    const auto shade = static_cast<std::uint8_t>(40 + (ex.rendered * 37) % 200);
    Raster raster(w, h, Rgb{255, 255, 255});
    raster.fill_rect(w / 8, h / 8, w - w / 8, h - h / 8, Rgb{shade, static_cast<std::uint8_t>(255 - shade), 128});
    ex.images.push_back(RenderedImage{encode_png(raster), w, h});
    ++ex.rendered;
    ex.figure.reset();
}

std::int64_t floor_div(std::int64_t a, std::int64_t b)
{
    auto q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

Value binary(const std::string& op, const Value& a, const Value& b)
{
    if (a.kind == K::Opaque || b.kind == K::Opaque || a.kind == K::Image || b.kind == K::Image) return Value::opaque();
    const auto unsupported = [&] {
        return PyException{"TypeError", fmt::format("unsupported operand type(s) for {}: '{}' and '{}'", op,
                                                    type_name(a), type_name(b))};
    };
    if (is_number(a) && is_number(b)) {
        if (is_integral(a) && is_integral(b)) {
            const auto x = as_int(a), y = as_int(b);
            if (op == "+") return Value::integer(x + y);
            if (op == "-") return Value::integer(x - y);
            if (op == "*") return Value::integer(x * y);
            if (op == "/") {
                if (y == 0) throw PyException{"ZeroDivisionError", "division by zero"};
                return Value::real(double(x) / double(y));
            }
            if (op == "//" || op == "%") {
                if (y == 0) throw PyException{"ZeroDivisionError", "integer division or modulo by zero"};
                const auto q = floor_div(x, y);
                return Value::integer(op == "//" ? q : x - q * y);
            }
            if (op == "**") {
                if (y < 0) return Value::real(std::pow(double(x), double(y)));
                std::int64_t r = 1;
                for (std::int64_t k = 0; k < y && k < 64; ++k) r *= x;
                return Value::integer(r);
            }
        }
        const double x = as_double(a), y = as_double(b);
        if (op == "+") return Value::real(x + y);
        if (op == "-") return Value::real(x - y);
        if (op == "*") return Value::real(x * y);
        if (op == "/" || op == "//" || op == "%") {
            if (y == 0.0) throw PyException{"ZeroDivisionError", "float division by zero"};
            if (op == "/") return Value::real(x / y);
            const double q = std::floor(x / y);
            return Value::real(op == "//" ? q : x - q * y);
        }
        if (op == "**") return Value::real(std::pow(x, y));
        throw unsupported();
    }
    if (op == "+" && a.kind == b.kind && a.kind == K::Str) return Value::str(a.s + b.s);
    if (op == "+" && a.kind == b.kind && (a.kind == K::List || a.kind == K::Tuple)) {
        auto items = *a.items;
        items.insert(items.end(), b.items->begin(), b.items->end());
        return Value::seq(a.kind, std::move(items));
    }
    if (op == "*" && (a.kind == K::Str || b.kind == K::Str) && (is_integral(a) || is_integral(b))) {
        const auto& s = a.kind == K::Str ? a.s : b.s;
        const auto n = is_integral(a) ? as_int(a) : as_int(b);
        std::string r;
        for (std::int64_t k = 0; k < n && r.size() < (1u << 20); ++k) r += s;
        return Value::str(std::move(r));
    }
    if (op == "%" && a.kind == K::Str) return Value::str(a.s); // printf-style formatting is not modelled
    throw unsupported();
}

bool equal(const Value& a, const Value& b)
{
    if (is_number(a) && is_number(b)) return as_double(a) == as_double(b);
    if (a.kind != b.kind) return false;
    switch (a.kind) {
    case K::None: return true;
    case K::Str: return a.s == b.s;
    case K::List:
    case K::Tuple:
        return a.items->size() == b.items->size() &&
               std::equal(a.items->begin(), a.items->end(), b.items->begin(), equal);
    default: return &a == &b;
    }
}

Value compare(const std::string& op, const Value& a, const Value& b)
{
    if (op == "==") return Value::boolean(equal(a, b));
    if (op == "!=") return Value::boolean(!equal(a, b));
    if (a.kind == K::Opaque || b.kind == K::Opaque) return Value::opaque();
    int c = 0;
    if (is_number(a) && is_number(b)) c = as_double(a) < as_double(b) ? -1 : as_double(a) > as_double(b) ? 1 : 0;
    else if (a.kind == K::Str && b.kind == K::Str) c = a.s.compare(b.s) < 0 ? -1 : a.s == b.s ? 0 : 1;
    else
        throw PyException{"TypeError", fmt::format("'{}' not supported between instances of '{}' and '{}'", op,
                                                   type_name(a), type_name(b))};
    if (op == "<") return Value::boolean(c < 0);
    if (op == ">") return Value::boolean(c > 0);
    if (op == "<=") return Value::boolean(c <= 0);
    return Value::boolean(c >= 0);
}

std::vector<Value> iterate(const Value& v)
{
    switch (v.kind) {
    case K::List:
    case K::Tuple: return *v.items;
    case K::Str: {
        std::vector<Value> out;
        for (char c : v.s) out.push_back(Value::str(std::string(1, c)));
        return out;
    }
    case K::Range: {
        std::vector<Value> out;
        const auto step = v.step.value_or(1);
        for (auto k = v.i; step > 0 ? k < *v.lo : k > *v.lo; k += step) {
            out.push_back(Value::integer(k));
            if (out.size() > 1'000'000) break;
        }
        return out;
    }
    default: throw PyException{"TypeError", fmt::format("'{}' object is not iterable", type_name(v))};
    }
}

std::int64_t range_length(const Value& r)
{
    const auto step = r.step.value_or(1);
    const auto span = *r.lo - r.i;
    if (step > 0) return span <= 0 ? 0 : (span + step - 1) / step;
    return span >= 0 ? 0 : (-span + (-step) - 1) / (-step);
}

// Python slice bounds for a sequence of length n.
std::pair<std::int64_t, std::int64_t> slice_bounds(const Value& s, std::int64_t n)
{
    auto fix = [n](std::optional<std::int64_t> v, std::int64_t dflt) {
        if (!v) return dflt;
        auto x = *v < 0 ? *v + n : *v;
        return std::clamp<std::int64_t>(x, 0, n);
    };
    const auto a = fix(s.lo, 0), b = fix(s.hi, n);
    return {a, std::max(a, b)};
}

class Evaluator {
public:
    Evaluator(ExecContext& ex, std::vector<Token> toks) : ex_(ex), toks_(std::move(toks)) {}

    Value expression_list()
    {
        auto first = expression();
        if (!peek(",")) return first;
        ValueList items{std::move(first)};
        while (accept(",")) {
            if (at_end() || peek(")") || peek("=")) break;
            items.push_back(expression());
        }
        return Value::seq(K::Tuple, std::move(items));
    }

    Value expression()
    {
        auto v = disjunction();
        if (peek_name("if")) {
            ++pos_;
            const auto cond = disjunction();
            expect_name("else");
            auto other = expression();
            return truthy(cond) ? v : other;
        }
        return v;
    }

    bool at_end() const { return toks_[pos_].type == Tok::End; }
    void expect_end()
    {
        if (!at_end()) throw PyException{"SyntaxError", "invalid syntax"};
    }

private:
    ExecContext& ex_;
    std::vector<Token> toks_;
    std::size_t pos_ = 0;

    const Token& cur() const { return toks_[pos_]; }
    bool peek(std::string_view op) const { return cur().type == Tok::Op && cur().text == op; }
    bool peek_name(std::string_view n) const { return cur().type == Tok::Name && cur().text == n; }
    bool accept(std::string_view op)
    {
        if (!peek(op)) return false;
        ++pos_;
        return true;
    }
    void expect(std::string_view op)
    {
        if (!accept(op)) throw PyException{"SyntaxError", fmt::format("expected '{}'", op)};
    }
    void expect_name(std::string_view n)
    {
        if (!peek_name(n)) throw PyException{"SyntaxError", fmt::format("expected '{}'", n)};
        ++pos_;
    }

    Value disjunction()
    {
        auto v = conjunction();
        while (peek_name("or")) {
            ++pos_;
            auto r = conjunction();
            if (!truthy(v)) v = std::move(r);
        }
        return v;
    }
    Value conjunction()
    {
        auto v = negation();
        while (peek_name("and")) {
            ++pos_;
            auto r = negation();
            if (truthy(v)) v = std::move(r);
        }
        return v;
    }
    Value negation()
    {
        if (peek_name("not")) {
            ++pos_;
            return Value::boolean(!truthy(negation()));
        }
        return comparison();
    }
    Value comparison()
    {
        auto left = sum();
        std::optional<bool> result;
        while (true) {
            std::string op;
            if (cur().type == Tok::Op && (cur().text == "==" || cur().text == "!=" || cur().text == "<" ||
                                          cur().text == ">" || cur().text == "<=" || cur().text == ">=")) {
                op = cur().text;
                ++pos_;
            } else if (peek_name("in")) {
                op = "in";
                ++pos_;
            } else if (peek_name("not") && toks_[pos_ + 1].type == Tok::Name && toks_[pos_ + 1].text == "in") {
                op = "not in";
                pos_ += 2;
            } else if (peek_name("is")) {
                ++pos_;
                op = "is";
                if (peek_name("not")) {
                    ++pos_;
                    op = "is not";
                }
            } else {
                break;
            }
            auto right = sum();
            bool r;
            if (op == "in" || op == "not in") {
                bool found = false;
                if (right.kind == K::Str && left.kind == K::Str) found = right.s.find(left.s) != std::string::npos;
                else
                    for (const auto& item : iterate(right)) found = found || equal(item, left);
                r = op == "in" ? found : !found;
            } else if (op == "is" || op == "is not") {
                const bool same = left.kind == right.kind && (left.kind == K::None || equal(left, right));
                r = op == "is" ? same : !same;
            } else {
                const auto c = compare(op, left, right);
                r = truthy(c);
            }
            result = result.value_or(true) && r;
            left = std::move(right);
        }
        return result ? Value::boolean(*result) : left;
    }
    Value sum()
    {
        auto v = term();
        while (peek("+") || peek("-")) {
            const auto op = cur().text;
            ++pos_;
            v = binary(op, v, term());
        }
        return v;
    }
    Value term()
    {
        auto v = unary();
        while (peek("*") || peek("/") || peek("//") || peek("%") || peek("@")) {
            const auto op = cur().text;
            ++pos_;
            auto r = unary();
            v = op == "@" ? Value::opaque() : binary(op, v, r);
        }
        return v;
    }
    Value unary()
    {
        if (accept("-")) {
            auto v = unary();
            if (v.kind == K::Float) return Value::real(-v.f);
            if (is_integral(v)) return Value::integer(-as_int(v));
            if (v.kind == K::Opaque || v.kind == K::Image) return Value::opaque();
            throw PyException{"TypeError", fmt::format("bad operand type for unary -: '{}'", type_name(v))};
        }
        if (accept("+")) return unary();
        if (accept("~")) return Value::opaque();
        return power();
    }
    Value power()
    {
        auto base = postfix();
        if (accept("**")) return binary("**", base, unary());
        return base;
    }

    Value postfix()
    {
        auto v = atom();
        while (true) {
            if (accept(".")) {
                if (cur().type != Tok::Name) throw PyException{"SyntaxError", "invalid syntax"};
                const auto name = cur().text;
                ++pos_;
                v = attribute(v, name);
            } else if (accept("(")) {
                ValueList args;
                std::map<std::string, Value> kwargs;
                while (!peek(")")) {
                    if (cur().type == Tok::Name && toks_[pos_ + 1].type == Tok::Op && toks_[pos_ + 1].text == "=") {
                        const auto key = cur().text;
                        pos_ += 2;
                        kwargs[key] = expression();
                    } else {
                        accept("*");
                        accept("**");
                        args.push_back(expression());
                    }
                    if (!accept(",")) break;
                }
                expect(")");
                v = call(v, args, kwargs);
            } else if (accept("[")) {
                ValueList index;
                bool tuple = false;
                while (!peek("]")) {
                    index.push_back(subscript_item());
                    if (!accept(",")) break;
                    tuple = true;
                }
                expect("]");
                v = subscript(v, index, tuple);
            } else {
                return v;
            }
        }
    }

    Value subscript_item()
    {
        std::optional<Value> first;
        if (!peek(":")) first = expression();
        if (!accept(":")) return *first;
        Value s;
        s.kind = K::Slice;
        auto bound = [&](const std::optional<Value>& x) -> std::optional<std::int64_t> {
            if (!x || x->kind == K::None) return std::nullopt;
            if (x->kind == K::Opaque) return std::nullopt;
            return require_int(*x, "slice index");
        };
        s.lo = bound(first);
        if (!peek("]") && !peek(",") && !peek(":")) s.hi = bound(expression());
        if (accept(":") && !peek("]") && !peek(",")) s.step = bound(expression());
        return s;
    }

    Value atom()
    {
        const auto tok = cur();
        switch (tok.type) {
        case Tok::Num: {
            ++pos_;
            std::string digits;
            for (char c : tok.text)
                if (c != '_') digits += c;
            try {
                if (digits.size() > 2 && digits[0] == '0' && (digits[1] == 'x' || digits[1] == 'X'))
                    return Value::integer(std::stoll(digits.substr(2), nullptr, 16));
                if (digits.find_first_of(".eE") != std::string::npos) return Value::real(std::stod(digits));
                return Value::integer(std::stoll(digits));
            } catch (const std::exception&) {
                throw PyException{"SyntaxError", "invalid decimal literal"};
            }
        }
        case Tok::Str:
        case Tok::FStr: {
            std::string text;
            while (cur().type == Tok::Str || cur().type == Tok::FStr) {
                text += cur().type == Tok::FStr ? format_fstring(cur().text) : cur().text;
                ++pos_;
            }
            return Value::str(std::move(text));
        }
        case Tok::Name: {
            ++pos_;
            if (tok.text == "True") return Value::boolean(true);
            if (tok.text == "False") return Value::boolean(false);
            if (tok.text == "None") return Value::none();
            if (tok.text == "lambda") {
                while (!at_end() && !peek(")") && !peek(",")) ++pos_;
                return Value::opaque();
            }
            return lookup(tok.text);
        }
        case Tok::Op:
            if (accept("(")) {
                if (accept(")")) return Value::seq(K::Tuple, {});
                auto first = expression();
                if (peek_name("for")) {
                    auto r = comprehension_tail(first);
                    expect(")");
                    return r;
                }
                if (accept(")")) return first;
                ValueList items{std::move(first)};
                while (accept(",")) {
                    if (peek(")")) break;
                    items.push_back(expression());
                }
                expect(")");
                return Value::seq(K::Tuple, std::move(items));
            }
            if (peek("[")) return list_display();
            if (accept("{")) {
                int depth = 1;
                while (depth > 0 && !at_end()) {
                    if (peek("{")) ++depth;
                    if (peek("}")) --depth;
                    ++pos_;
                }
                return Value::opaque();
            }
            break;
        case Tok::End: break;
        }
        throw PyException{"SyntaxError", "invalid syntax"};
    }

    Value comprehension_tail(const Value&)
    {
        // generator expressions are not modelled element-wise
        int depth = 0;
        while (!at_end()) {
            if (peek("(") || peek("[")) ++depth;
            if (peek(")") || peek("]")) {
                if (depth == 0) break;
                --depth;
            }
            ++pos_;
        }
        return Value::opaque();
    }

    // List display or comprehension. Comprehensions re-evaluate the element tokens per item.
    Value list_display()
    {
        expect("[");
        const auto start = pos_;
        int depth = 0;
        std::size_t for_pos = 0, end = start;
        for (auto k = start; k < toks_.size(); ++k) {
            const auto& t = toks_[k];
            if (t.type == Tok::End) throw PyException{"SyntaxError", "'[' was never closed"};
            if (t.type == Tok::Op && (t.text == "(" || t.text == "[" || t.text == "{")) ++depth;
            if (t.type == Tok::Op && (t.text == ")" || t.text == "]" || t.text == "}")) {
                if (depth == 0) {
                    end = k;
                    break;
                }
                --depth;
            }
            if (depth == 0 && t.type == Tok::Name && t.text == "for" && for_pos == 0) for_pos = k;
        }
        if (for_pos == 0) {
            ValueList items;
            while (!peek("]")) {
                items.push_back(expression());
                if (!accept(",")) break;
            }
            expect("]");
            return Value::seq(K::List, std::move(items));
        }
        // [elem for target in iterable (if cond)?]
        std::vector<Token> elem(toks_.begin() + start, toks_.begin() + for_pos);
        elem.push_back({Tok::End, {}});
        pos_ = for_pos + 1;
        std::vector<std::string> targets;
        while (cur().type == Tok::Name && cur().text != "in") {
            targets.push_back(cur().text);
            ++pos_;
            if (!accept(",")) break;
        }
        expect_name("in");
        const auto iter_start = pos_;
        std::size_t cond_pos = end;
        for (auto k = iter_start; k < end; ++k)
            if (toks_[k].type == Tok::Name && toks_[k].text == "if") {
                cond_pos = k;
                break;
            }
        std::vector<Token> iter_toks(toks_.begin() + iter_start, toks_.begin() + cond_pos);
        iter_toks.push_back({Tok::End, {}});
        std::vector<Token> cond_toks;
        if (cond_pos < end) {
            cond_toks.assign(toks_.begin() + cond_pos + 1, toks_.begin() + end);
            cond_toks.push_back({Tok::End, {}});
        }
        pos_ = end + 1;

        const auto iterable = Evaluator(ex_, iter_toks).expression_list();
        if (iterable.kind == K::Opaque) return Value::opaque();
        ValueList result;
        for (const auto& item : iterate(iterable)) {
            tick(ex_);
            bind_targets(ex_, targets, item);
            if (!cond_toks.empty() && !truthy(Evaluator(ex_, cond_toks).expression())) continue;
            result.push_back(Evaluator(ex_, elem).expression());
        }
        return Value::seq(K::List, std::move(result));
    }

public:
    static void bind_targets(ExecContext& ex, const std::vector<std::string>& targets, const Value& item)
    {
        if (targets.size() == 1) {
            ex.ns[targets[0]] = item;
            return;
        }
        if (item.kind == K::Opaque) {
            for (const auto& t : targets) ex.ns[t] = Value::opaque();
            return;
        }
        const auto parts = iterate(item);
        if (parts.size() != targets.size())
            throw PyException{"ValueError", fmt::format("not enough values to unpack (expected {}, got {})",
                                                        targets.size(), parts.size())};
        for (std::size_t k = 0; k < targets.size(); ++k) ex.ns[targets[k]] = parts[k];
    }

private:
    std::string format_fstring(const std::string& text)
    {
        std::string out;
        for (std::size_t k = 0; k < text.size(); ++k) {
            const char c = text[k];
            if (c == '{' && k + 1 < text.size() && text[k + 1] == '{') {
                out += '{';
                ++k;
            } else if (c == '}' && k + 1 < text.size() && text[k + 1] == '}') {
                out += '}';
                ++k;
            } else if (c == '{') {
                int depth = 1;
                std::size_t e = k + 1;
                for (; e < text.size() && depth > 0; ++e) {
                    if (text[e] == '{') ++depth;
                    if (text[e] == '}') --depth;
                }
                if (depth != 0) throw PyException{"SyntaxError", "f-string: expecting '}'"};
                std::string inner = text.substr(k + 1, e - k - 2);
                std::string spec;
                const auto colon = header_colon(inner);
                if (colon != std::string::npos) {
                    spec = inner.substr(colon + 1);
                    inner = inner.substr(0, colon);
                }
                bool want_repr = false;
                if (inner.size() > 2 && inner.substr(inner.size() - 2) == "!r") {
                    want_repr = true;
                    inner.resize(inner.size() - 2);
                }
                const auto v = Evaluator(ex_, tokenize(inner)).expression();
                out += want_repr ? repr(v) : format_spec(v, spec);
                k = e - 1;
            } else {
                out += c;
            }
        }
        return out;
    }

    static std::string format_spec(const Value& v, const std::string& spec)
    {
        if (spec.empty() || !is_number(v)) return str(v);
        try {
            if (is_integral(v) && spec.back() != 'f' && spec.back() != '%' && spec.back() != 'e')
                return fmt::format(fmt::runtime("{:" + spec + "}"), as_int(v));
            if (spec.back() == '%') {
                auto inner = spec.substr(0, spec.size() - 1) + "f";
                return fmt::format(fmt::runtime("{:" + inner + "}"), as_double(v) * 100.0) + "%";
            }
            return fmt::format(fmt::runtime("{:" + spec + "}"), as_double(v));
        } catch (const fmt::format_error&) {
            throw PyException{"ValueError", fmt::format("Invalid format specifier '{}'", spec)};
        }
    }

    Value lookup(const std::string& name)
    {
        if (auto it = ex_.ns.find(name); it != ex_.ns.end()) return it->second;
        static const char* const kBuiltins[] = {"print", "len", "range", "str", "int", "float", "round", "abs",
                                                "min", "max", "sum", "list", "tuple", "sorted", "enumerate", "zip",
                                                "isinstance", "type", "bool", "repr", "dict", "set", "open"};
        for (const char* b : kBuiltins)
            if (name == b) return Value::named(K::Builtin, name);
        static const char* const kExceptions[] = {"Exception", "ValueError", "TypeError", "RuntimeError",
                                                  "KeyError", "IndexError", "ZeroDivisionError", "AssertionError",
                                                  "NotImplementedError", "SystemExit"};
        for (const char* e : kExceptions)
            if (name == e) return Value::named(K::Builtin, name);
        throw PyException{"NameError", fmt::format("name '{}' is not defined", name)};
    }

    Value attribute(const Value& v, const std::string& name)
    {
        switch (v.kind) {
        case K::Module: {
            const auto full = v.s + "." + name;
            if (full == "matplotlib.pyplot" || full == "PIL.Image" || full == "os.path") return Value::named(K::Module, full);
            if (full == "math.pi" || full == "numpy.pi") return Value::real(std::numbers::pi);
            if (full == "math.e") return Value::real(std::numbers::e);
            return Value::named(K::Builtin, full);
        }
        case K::Image:
            if (name == "width") return Value::integer(v.w);
            if (name == "height") return Value::integer(v.h);
            if (name == "size") return Value::seq(K::Tuple, {Value::integer(v.w), Value::integer(v.h)});
            if (name == "shape")
                return Value::seq(K::Tuple, {Value::integer(v.h), Value::integer(v.w), Value::integer(3)});
            if (name == "mode") return Value::str("RGB");
            if (name == "ndim") return Value::integer(3);
            return Value::method(name, v);
        case K::Frame:
            if (name == "shape")
                return Value::seq(K::Tuple, {Value::integer(v.h), Value::integer(v.w), Value::integer(3)});
            return Value::method(name, v);
        case K::Str:
        case K::List:
        case K::Video:
        case K::Figure: return Value::method(name, v);
        case K::Opaque:
        case K::Builtin:
        case K::Method: return Value::opaque();
        default:
            throw PyException{"AttributeError", fmt::format("'{}' object has no attribute '{}'", type_name(v), name)};
        }
    }

    Value subscript(const Value& v, const ValueList& index, bool tuple)
    {
        if (index.empty()) throw PyException{"SyntaxError", "invalid syntax"};
        switch (v.kind) {
        case K::Image:
        case K::Frame: {
            if (v.kind == K::Frame) return Value::opaque();
            std::int64_t h = v.h, w = v.w;
            for (std::size_t axis = 0; axis < index.size(); ++axis) {
                const auto& ix = index[axis];
                if (ix.kind != K::Slice) return Value::opaque();
                if (axis == 0) {
                    const auto [a, b] = slice_bounds(ix, v.h);
                    h = b - a;
                } else if (axis == 1) {
                    const auto [a, b] = slice_bounds(ix, v.w);
                    w = b - a;
                }
            }
            return Value::image(K::Image, static_cast<int>(w), static_cast<int>(h));
        }
        case K::Video: {
            if (tuple || index[0].kind != K::Int) return Value::opaque();
            auto k = index[0].i;
            if (k < 0) k += v.i;
            if (k < 0 || k >= v.i)
                throw PyException{"IndexError", fmt::format("Out of bound indices: {}", index[0].i)};
            return Value::image(K::Frame, v.w, v.h);
        }
        case K::List:
        case K::Tuple:
        case K::Str: {
            const auto n = static_cast<std::int64_t>(v.kind == K::Str ? v.s.size() : v.items->size());
            const auto& ix = index[0];
            if (tuple) throw PyException{"TypeError", fmt::format("{} indices must be integers or slices", type_name(v))};
            if (ix.kind == K::Slice) {
                const auto [a, b] = slice_bounds(ix, n);
                if (v.kind == K::Str) return Value::str(v.s.substr(a, b - a));
                return Value::seq(v.kind, ValueList(v.items->begin() + a, v.items->begin() + b));
            }
            auto k = require_int(ix, "index");
            if (k < 0) k += n;
            if (k < 0 || k >= n) throw PyException{"IndexError", fmt::format("{} index out of range", type_name(v))};
            if (v.kind == K::Str) return Value::str(std::string(1, v.s[k]));
            return (*v.items)[k];
        }
        case K::Range: {
            auto k = require_int(index[0], "index");
            const auto n = range_length(v);
            if (k < 0) k += n;
            if (k < 0 || k >= n) throw PyException{"IndexError", "range object index out of range"};
            return Value::integer(v.i + k * v.step.value_or(1));
        }
        case K::Opaque: return Value::opaque();
        default:
            throw PyException{"TypeError", fmt::format("'{}' object is not subscriptable", type_name(v))};
        }
    }

    static std::optional<PixelSize> figsize(const std::map<std::string, Value>& kwargs)
    {
        const auto it = kwargs.find("figsize");
        double dpi = 100.0;
        if (auto d = kwargs.find("dpi"); d != kwargs.end() && is_number(d->second)) dpi = as_double(d->second);
        if (it == kwargs.end()) return PixelSize{static_cast<int>(std::lround(6.4 * dpi)), static_cast<int>(std::lround(4.8 * dpi))};
        if ((it->second.kind != K::Tuple && it->second.kind != K::List) || it->second.items->size() != 2 ||
            !is_number((*it->second.items)[0]) || !is_number((*it->second.items)[1]))
            throw PyException{"ValueError", "figsize must be a pair of numbers"};
        const auto w = std::lround(as_double((*it->second.items)[0]) * dpi);
        const auto h = std::lround(as_double((*it->second.items)[1]) * dpi);
        if (w < 1 || h < 1 || w >= 65536 || h >= 65536)
            throw PyException{"ValueError", fmt::format("Image size of {}x{} pixels is too large", w, h)};
        return PixelSize{static_cast<int>(w), static_cast<int>(h)};
    }

    Value call(const Value& fn, const ValueList& args, const std::map<std::string, Value>& kwargs)
    {
        if (fn.kind == K::Opaque) return Value::opaque();
        if (fn.kind == K::Method) return call_method(fn.s, (*fn.items)[0], args);
        if (fn.kind != K::Builtin)
            throw PyException{"TypeError", fmt::format("'{}' object is not callable", type_name(fn))};
        const auto& name = fn.s;
        const auto arg = [&](std::size_t k) -> const Value& {
            if (k >= args.size()) throw PyException{"TypeError", fmt::format("{}() missing required argument", name)};
            return args[k];
        };

        if (name == "print") {
            std::string sep = " ", end = "\n";
            if (auto it = kwargs.find("sep"); it != kwargs.end() && it->second.kind == K::Str) sep = it->second.s;
            if (auto it = kwargs.find("end"); it != kwargs.end() && it->second.kind == K::Str) end = it->second.s;
            std::string line;
            for (std::size_t k = 0; k < args.size(); ++k) {
                if (k) line += sep;
                line += str(args[k]);
            }
            write_out(ex_, line + end);
            return Value::none();
        }
        if (name == "len") {
            const auto& v = arg(0);
            switch (v.kind) {
            case K::Str: return Value::integer(static_cast<std::int64_t>(v.s.size()));
            case K::List:
            case K::Tuple: return Value::integer(static_cast<std::int64_t>(v.items->size()));
            case K::Range: return Value::integer(range_length(v));
            case K::Video: return Value::integer(v.i);
            case K::Image: return Value::integer(v.h);
            case K::Opaque: return Value::opaque();
            default: throw PyException{"TypeError", fmt::format("object of type '{}' has no len()", type_name(v))};
            }
        }
        if (name == "range") {
            Value r;
            r.kind = K::Range;
            if (args.size() == 1) {
                r.i = 0;
                r.lo = require_int(arg(0), "range");
            } else {
                r.i = require_int(arg(0), "range");
                r.lo = require_int(arg(1), "range");
                if (args.size() > 2) r.step = require_int(args[2], "range");
                if (r.step && *r.step == 0) throw PyException{"ValueError", "range() arg 3 must not be zero"};
            }
            return r;
        }
        if (name == "str") return Value::str(args.empty() ? "" : str(arg(0)));
        if (name == "repr") return Value::str(repr(arg(0)));
        if (name == "bool") return Value::boolean(!args.empty() && truthy(arg(0)));
        if (name == "int") {
            if (args.empty()) return Value::integer(0);
            const auto& v = arg(0);
            if (is_integral(v)) return Value::integer(as_int(v));
            if (v.kind == K::Float) return Value::integer(static_cast<std::int64_t>(std::trunc(v.f)));
            if (v.kind == K::Str) {
                try {
                    std::size_t used = 0;
                    const auto t = trim(v.s);
                    const auto x = std::stoll(t, &used);
                    if (used == t.size()) return Value::integer(x);
                } catch (const std::exception&) {
                }
                throw PyException{"ValueError", fmt::format("invalid literal for int() with base 10: {}", repr(v))};
            }
            return Value::opaque();
        }
        if (name == "float") {
            if (args.empty()) return Value::real(0.0);
            const auto& v = arg(0);
            if (is_number(v)) return Value::real(as_double(v));
            if (v.kind == K::Str) {
                try {
                    std::size_t used = 0;
                    const auto t = trim(v.s);
                    const auto x = std::stod(t, &used);
                    if (used == t.size()) return Value::real(x);
                } catch (const std::exception&) {
                }
                throw PyException{"ValueError", fmt::format("could not convert string to float: {}", repr(v))};
            }
            return Value::opaque();
        }
        if (name == "abs") {
            const auto& v = arg(0);
            if (v.kind == K::Float) return Value::real(std::abs(v.f));
            if (is_integral(v)) return Value::integer(std::abs(as_int(v)));
            return Value::opaque();
        }
        if (name == "round") {
            const auto& v = arg(0);
            if (!is_number(v)) return Value::opaque();
            if (args.size() < 2) return Value::integer(static_cast<std::int64_t>(std::nearbyint(as_double(v))));
            const auto digits = require_int(args[1], "round");
            const double scale = std::pow(10.0, static_cast<double>(digits));
            return Value::real(std::nearbyint(as_double(v) * scale) / scale);
        }
        if (name == "min" || name == "max" || name == "sum" || name == "sorted") {
            const auto items = args.size() == 1 ? iterate(arg(0)) : args;
            if (name == "sum") {
                Value acc = Value::integer(0);
                for (const auto& x : items) acc = binary("+", acc, x);
                return acc;
            }
            if (name == "sorted") {
                auto copy = items;
                std::stable_sort(copy.begin(), copy.end(),
                                 [](const Value& a, const Value& b) { return truthy(compare("<", a, b)); });
                return Value::seq(K::List, std::move(copy));
            }
            if (items.empty()) throw PyException{"ValueError", fmt::format("{}() arg is an empty sequence", name)};
            Value best = items[0];
            for (const auto& x : items)
                if (truthy(compare(name == "min" ? "<" : ">", x, best))) best = x;
            return best;
        }
        if (name == "list" || name == "tuple")
            return Value::seq(name == "list" ? K::List : K::Tuple, args.empty() ? ValueList{} : iterate(arg(0)));
        if (name == "enumerate" || name == "zip") {
            ValueList out;
            if (name == "enumerate") {
                std::int64_t k = 0;
                for (const auto& x : iterate(arg(0))) out.push_back(Value::seq(K::Tuple, {Value::integer(k++), x}));
            } else {
                std::vector<ValueList> cols;
                for (const auto& a : args) cols.push_back(iterate(a));
                std::size_t n = cols.empty() ? 0 : cols[0].size();
                for (const auto& c : cols) n = std::min(n, c.size());
                for (std::size_t k = 0; k < n; ++k) {
                    ValueList row;
                    for (const auto& c : cols) row.push_back(c[k]);
                    out.push_back(Value::seq(K::Tuple, std::move(row)));
                }
            }
            return Value::seq(K::List, std::move(out));
        }
        if (name == "isinstance" || name == "type" || name == "dict" || name == "set") return Value::opaque();
        if (name == "open") throw PyException{"PermissionError", "file system access is not available"};
        if (std::isupper(static_cast<unsigned char>(name[0])) && name.find('.') == std::string::npos) {
            // exception constructor: keep the message for `raise`
            return Value::seq(K::Tuple, {Value::str(name), Value::str(args.empty() ? "" : str(args[0]))});
        }
        return call_module_function(name, args, kwargs);
    }

    Value call_module_function(const std::string& name, const ValueList& args, const std::map<std::string, Value>& kwargs)
    {
        const auto dot = name.rfind('.');
        const auto module = dot == std::string::npos ? std::string() : name.substr(0, dot);
        const auto fn = dot == std::string::npos ? name : name.substr(dot + 1);

        if (module == "matplotlib.pyplot") {
            if (fn == "figure") {
                ex_.figure = figsize(kwargs);
                return Value::image(K::Figure, ex_.figure->width, ex_.figure->height);
            }
            if (fn == "subplots") {
                ex_.figure = figsize(kwargs);
                return Value::seq(K::Tuple, {Value::image(K::Figure, ex_.figure->width, ex_.figure->height), Value::opaque()});
            }
            if (fn == "show") {
                show_figure(ex_);
                return Value::none();
            }
            if (fn == "close" || fn == "clf") {
                ex_.figure.reset();
                return Value::none();
            }
            if (fn == "savefig") return Value::none();
            if (fn == "imshow" && !args.empty() && args[0].kind == K::Image && (args[0].w == 0 || args[0].h == 0))
                throw PyException{"TypeError", "Invalid shape for image data"};
            ensure_figure(ex_);
            return Value::opaque();
        }
        if (module == "numpy" || module == "np") {
            if ((fn == "array" || fn == "asarray") && !args.empty()) return args[0];
            return Value::opaque();
        }
        if (module == "PIL.Image" && fn == "fromarray" && !args.empty()) return args[0];
        if (module == "time" && fn == "sleep") {
            if (args.empty() || !is_number(args[0])) throw PyException{"TypeError", "sleep() argument must be a number"};
            const auto ms = static_cast<std::int64_t>(std::ceil(as_double(args[0]) * 1000.0));
            if (ex_.opt.real_time) {
                const auto remaining = ex_.timeout_ms - ex_.elapsed_ms;
                std::this_thread::sleep_for(std::chrono::milliseconds(std::clamp<std::int64_t>(ms, 0, std::max<std::int64_t>(0, remaining + 1))));
            }
            tick(ex_, ms);
            return Value::none();
        }
        if (module == "time" && fn == "time") return Value::real(static_cast<double>(ex_.elapsed_ms) / 1000.0);
        if (module == "os" && fn == "_exit") {
            ex_.process_exit = true;
            throw SandboxError(SandboxErrorKind::SessionDead, "interpreter process exited");
        }
        if (module == "sys" && fn == "exit") throw PyException{"SystemExit", args.empty() ? "" : str(args[0])};
        if (module == "math" && !args.empty() && is_number(args[0])) {
            const double x = as_double(args[0]);
            if (fn == "sqrt") {
                if (x < 0) throw PyException{"ValueError", "math domain error"};
                return Value::real(std::sqrt(x));
            }
            if (fn == "floor") return Value::integer(static_cast<std::int64_t>(std::floor(x)));
            if (fn == "ceil") return Value::integer(static_cast<std::int64_t>(std::ceil(x)));
        }
        return Value::opaque();
    }

    Value call_method(const std::string& name, const Value& self, const ValueList& args)
    {
        switch (self.kind) {
        case K::Image: {
            if (name == "crop" && !args.empty() && (args[0].kind == K::Tuple || args[0].kind == K::List) &&
                args[0].items->size() == 4) {
                const auto& box = *args[0].items;
                if (!std::all_of(box.begin(), box.end(), is_number)) return Value::opaque();
                const auto w = std::lround(as_double(box[2]) - as_double(box[0]));
                const auto h = std::lround(as_double(box[3]) - as_double(box[1]));
                return Value::image(K::Image, static_cast<int>(std::max(0L, w)), static_cast<int>(std::max(0L, h)));
            }
            if (name == "resize" && !args.empty() && (args[0].kind == K::Tuple || args[0].kind == K::List) &&
                args[0].items->size() == 2) {
                const auto& sz = *args[0].items;
                return Value::image(K::Image, static_cast<int>(require_int(sz[0], "size")),
                                    static_cast<int>(require_int(sz[1], "size")));
            }
            if (name == "convert" || name == "copy" || name == "rotate" || name == "transpose" || name == "astype")
                return self;
            return Value::opaque();
        }
        case K::Frame:
            if (name == "asnumpy") return Value::image(K::Image, self.w, self.h);
            return Value::opaque();
        case K::Video:
            if (name == "get_avg_fps") return Value::real(self.f);
            return Value::opaque();
        case K::Str:
            if (name == "upper" || name == "lower") {
                auto s = self.s;
                for (auto& c : s)
                    c = static_cast<char>(name == "upper" ? std::toupper(static_cast<unsigned char>(c))
                                                          : std::tolower(static_cast<unsigned char>(c)));
                return Value::str(std::move(s));
            }
            if (name == "strip") return Value::str(trim(self.s));
            if (name == "join" && !args.empty()) {
                std::string out;
                bool first = true;
                for (const auto& x : iterate(args[0])) {
                    if (!first) out += self.s;
                    first = false;
                    out += str(x);
                }
                return Value::str(std::move(out));
            }
            return Value::opaque();
        case K::List:
            if (name == "append" && !args.empty()) {
                self.items->push_back(args[0]);
                return Value::none();
            }
            return Value::opaque();
        default: return Value::opaque();
        }
    }
};

// Finds top-level positions of `op` tokens (outside brackets).
std::vector<std::size_t> top_level_ops(const std::vector<Token>& toks, std::string_view op)
{
    std::vector<std::size_t> out;
    int depth = 0;
    for (std::size_t k = 0; k < toks.size(); ++k) {
        const auto& t = toks[k];
        if (t.type != Tok::Op) continue;
        if (t.text == "(" || t.text == "[" || t.text == "{") ++depth;
        else if (t.text == ")" || t.text == "]" || t.text == "}") --depth;
        else if (depth == 0 && t.text == op) out.push_back(k);
    }
    return out;
}

std::vector<Token> slice_tokens(const std::vector<Token>& toks, std::size_t a, std::size_t b)
{
    std::vector<Token> out(toks.begin() + a, toks.begin() + b);
    out.push_back({Tok::End, {}});
    return out;
}

Value eval_tokens(ExecContext& ex, std::vector<Token> toks)
{
    Evaluator e(ex, std::move(toks));
    auto v = e.expression_list();
    e.expect_end();
    return v;
}

void assign(ExecContext& ex, const std::vector<Token>& target, const Value& value)
{
    // strip surrounding parentheses / brackets of tuple targets
    std::vector<Token> t(target.begin(), target.end() - 1);
    if (t.empty()) throw PyException{"SyntaxError", "invalid syntax"};
    std::vector<std::string> names;
    bool simple = true;
    for (std::size_t k = 0; k < t.size(); ++k) {
        if (t[k].type == Tok::Name) {
            names.push_back(t[k].text);
        } else if (t[k].type == Tok::Op && (t[k].text == "," || t[k].text == "(" || t[k].text == ")" ||
                                            t[k].text == "[" || t[k].text == "]")) {
            if (t[k].text == "[" && k > 0 && t[k - 1].type == Tok::Name) simple = false;
        } else {
            simple = false;
        }
    }
    if (simple && !names.empty()) {
        if (names.size() == 1 && top_level_ops(target, ",").empty() && t.size() == 1) {
            ex.ns[names[0]] = value;
            return;
        }
        Evaluator::bind_targets(ex, names, value);
        return;
    }
    // subscript or attribute target: evaluate the container for its side-effect-free checks
    if (t.size() >= 4 && t[0].type == Tok::Name && t[1].type == Tok::Op && t[1].text == "[" && t.back().text == "]") {
        auto container = ex.ns.find(t[0].text);
        if (container == ex.ns.end()) throw PyException{"NameError", fmt::format("name '{}' is not defined", t[0].text)};
        if (container->second.kind == K::List) {
            const auto idx = eval_tokens(ex, slice_tokens(t, 2, t.size() - 1));
            if (is_integral(idx)) {
                auto k = as_int(idx);
                const auto n = static_cast<std::int64_t>(container->second.items->size());
                if (k < 0) k += n;
                if (k < 0 || k >= n) throw PyException{"IndexError", "list assignment index out of range"};
                (*container->second.items)[k] = value;
            }
        }
        return;
    }
    if (t[0].type == Tok::Name && !ex.ns.count(t[0].text))
        throw PyException{"NameError", fmt::format("name '{}' is not defined", t[0].text)};
}

void run_block(ExecContext& ex, const std::vector<Stmt>& block);

void run_statement(ExecContext& ex, const Stmt& st)
{
    ex.line = st.line;
    tick(ex);
    const std::string_view text = st.text;

    if (starts_with_word(text, "for")) {
        auto toks = tokenize(text.substr(3));
        std::vector<std::string> targets;
        std::size_t k = 0;
        while (k < toks.size() && toks[k].type == Tok::Name && toks[k].text != "in") {
            targets.push_back(toks[k].text);
            ++k;
            if (toks[k].type == Tok::Op && toks[k].text == ",") ++k;
            else if (toks[k].type == Tok::Op && (toks[k].text == "(" || toks[k].text == ")")) ++k;
        }
        while (k < toks.size() && toks[k].type == Tok::Op && toks[k].text == ")") ++k;
        if (targets.empty() || toks[k].type != Tok::Name || toks[k].text != "in")
            throw PyException{"SyntaxError", "invalid syntax"};
        const auto iterable = eval_tokens(ex, slice_tokens(toks, k + 1, toks.size() - 1));
        if (iterable.kind == K::Range) {
            const auto step = iterable.step.value_or(1);
            for (auto x = iterable.i; step > 0 ? x < *iterable.lo : x > *iterable.lo; x += step) {
                Evaluator::bind_targets(ex, targets, Value::integer(x));
                try {
                    run_block(ex, st.body);
                } catch (const BreakSignal&) {
                    return;
                } catch (const ContinueSignal&) {
                }
                tick(ex);
            }
        } else {
            const auto items = iterable.kind == K::Opaque ? ValueList{} : iterate(iterable);
            for (const auto& item : items) {
                Evaluator::bind_targets(ex, targets, item);
                try {
                    run_block(ex, st.body);
                } catch (const BreakSignal&) {
                    return;
                } catch (const ContinueSignal&) {
                }
                tick(ex);
            }
        }
        for (const auto& other : st.orelse) run_block(ex, other.body);
        return;
    }
    if (starts_with_word(text, "while")) {
        const auto cond = tokenize(text.substr(5));
        while (truthy(eval_tokens(ex, cond))) {
            try {
                run_block(ex, st.body);
            } catch (const BreakSignal&) {
                return;
            } catch (const ContinueSignal&) {
            }
            tick(ex);
        }
        return;
    }
    if (starts_with_word(text, "if") || starts_with_word(text, "elif")) {
        const auto skip = starts_with_word(text, "if") ? 2 : 4;
        if (truthy(eval_tokens(ex, tokenize(text.substr(skip))))) {
            run_block(ex, st.body);
            return;
        }
        for (const auto& other : st.orelse) {
            if (starts_with_word(other.text, "elif")) {
                run_statement(ex, other);
                return;
            }
            run_block(ex, other.body);
        }
        return;
    }
    if (starts_with_word(text, "with")) {
        run_block(ex, st.body);
        return;
    }
    if (starts_with_word(text, "try")) {
        const Stmt* handler = nullptr;
        const Stmt* finally = nullptr;
        for (const auto& other : st.orelse) {
            if (starts_with_word(other.text, "except") && !handler) handler = &other;
            if (starts_with_word(other.text, "finally")) finally = &other;
        }
        try {
            run_block(ex, st.body);
        } catch (const PyException&) {
            if (!handler) {
                if (finally) run_block(ex, finally->body);
                throw;
            }
            run_block(ex, handler->body);
        }
        if (finally) run_block(ex, finally->body);
        return;
    }
    if (starts_with_word(text, "def") || starts_with_word(text, "class")) {
        auto toks = tokenize(text.substr(starts_with_word(text, "def") ? 3 : 5));
        if (toks.empty() || toks[0].type != Tok::Name) throw PyException{"SyntaxError", "invalid syntax"};
        ex.ns[toks[0].text] = Value::opaque();
        return;
    }
    if (starts_with_word(text, "else") || starts_with_word(text, "except") || starts_with_word(text, "finally"))
        throw PyException{"SyntaxError", "invalid syntax"};

    if (text == "pass") return;
    if (text == "break") throw BreakSignal{};
    if (text == "continue") throw ContinueSignal{};
    if (starts_with_word(text, "return")) return;
    if (starts_with_word(text, "global") || starts_with_word(text, "nonlocal")) return;

    if (starts_with_word(text, "import")) {
        auto toks = tokenize(text.substr(6));
        std::size_t k = 0;
        while (toks[k].type != Tok::End) {
            std::string full;
            while (toks[k].type == Tok::Name && toks[k].text != "as") {
                full += toks[k].text;
                ++k;
                if (toks[k].type == Tok::Op && toks[k].text == ".") {
                    full += '.';
                    ++k;
                } else {
                    break;
                }
            }
            if (full.empty()) throw PyException{"SyntaxError", "invalid syntax"};
            std::string alias = full.substr(0, full.find('.'));
            auto bound = Value::named(K::Module, alias);
            if (toks[k].type == Tok::Name && toks[k].text == "as") {
                alias = toks[k + 1].text;
                bound = Value::named(K::Module, full);
                k += 2;
            }
            ex.ns[alias] = bound;
            if (toks[k].type == Tok::Op && toks[k].text == ",") ++k;
            else if (toks[k].type != Tok::End) throw PyException{"SyntaxError", "invalid syntax"};
        }
        return;
    }
    if (starts_with_word(text, "from")) {
        auto toks = tokenize(text.substr(4));
        std::size_t k = 0;
        std::string module;
        while (toks[k].type == Tok::Name && toks[k].text != "import") {
            module += toks[k].text;
            ++k;
            if (toks[k].type == Tok::Op && toks[k].text == ".") {
                module += '.';
                ++k;
            }
        }
        if (toks[k].type != Tok::Name || toks[k].text != "import") throw PyException{"SyntaxError", "invalid syntax"};
        ++k;
        while (toks[k].type != Tok::End) {
            if (toks[k].type == Tok::Op && (toks[k].text == "(" || toks[k].text == ")" || toks[k].text == ",")) {
                ++k;
                continue;
            }
            if (toks[k].type == Tok::Op && toks[k].text == "*") {
                ++k;
                continue;
            }
            const auto name = toks[k].text;
            auto alias = name;
            ++k;
            if (toks[k].type == Tok::Name && toks[k].text == "as") {
                alias = toks[k + 1].text;
                k += 2;
            }
            const auto full = module + "." + name;
            const bool submodule = full == "matplotlib.pyplot" || full == "PIL.Image" || full == "os.path";
            ex.ns[alias] = Value::named(submodule ? K::Module : K::Builtin, full);
        }
        return;
    }
    if (starts_with_word(text, "raise")) {
        const auto rest = trim(text.substr(5));
        if (rest.empty()) throw PyException{"RuntimeError", "No active exception to reraise"};
        const auto v = eval_tokens(ex, tokenize(rest));
        if (v.kind == K::Tuple && v.items->size() == 2 && (*v.items)[0].kind == K::Str)
            throw PyException{(*v.items)[0].s, (*v.items)[1].s};
        if (v.kind == K::Builtin) throw PyException{v.s, ""};
        throw PyException{"TypeError", "exceptions must derive from BaseException"};
    }
    if (starts_with_word(text, "assert")) {
        auto toks = tokenize(text.substr(6));
        const auto commas = top_level_ops(toks, ",");
        const auto cond_end = commas.empty() ? toks.size() - 1 : commas.front();
        if (!truthy(eval_tokens(ex, slice_tokens(toks, 0, cond_end)))) {
            std::string msg;
            if (!commas.empty()) msg = str(eval_tokens(ex, slice_tokens(toks, commas.front() + 1, toks.size() - 1)));
            throw PyException{"AssertionError", msg};
        }
        return;
    }
    if (starts_with_word(text, "del")) {
        for (const auto& t : tokenize(text.substr(3)))
            if (t.type == Tok::Name) ex.ns.erase(t.text);
        return;
    }

    auto toks = tokenize(text);
    for (const char* aug : {"+=", "-=", "*=", "/=", "//=", "%=", "**="}) {
        const auto pos = top_level_ops(toks, aug);
        if (pos.empty()) continue;
        const auto target = slice_tokens(toks, 0, pos[0]);
        const auto current = eval_tokens(ex, target);
        const auto rhs = eval_tokens(ex, slice_tokens(toks, pos[0] + 1, toks.size() - 1));
        std::string op(aug);
        op.pop_back();
        Value updated;
        if (op == "+" && current.kind == K::List) {
            for (const auto& x : iterate(rhs)) current.items->push_back(x);
            updated = current;
        } else {
            updated = binary(op, current, rhs);
        }
        assign(ex, target, updated);
        return;
    }
    const auto eqs = top_level_ops(toks, "=");
    if (!eqs.empty()) {
        const auto value = eval_tokens(ex, slice_tokens(toks, eqs.back() + 1, toks.size() - 1));
        std::size_t start = 0;
        for (const auto e : eqs) {
            assign(ex, slice_tokens(toks, start, e), value);
            start = e + 1;
        }
        return;
    }
    eval_tokens(ex, std::move(toks));
}

void run_block(ExecContext& ex, const std::vector<Stmt>& block)
{
    for (const auto& st : block) run_statement(ex, st);
}

std::string traceback(int line, const PyException& e)
{
    return fmt::format("Traceback (most recent call last):\n  File \"<string>\", line {}, in <module>\n{}{}{}\n", line,
                       e.type, e.message.empty() ? "" : ": ", e.message);
}

} // namespace

struct FakeSandbox::Session {
    std::mutex mu;
    std::map<std::string, Value> ns;
    SessionCaps caps;
    bool dead = false;
};

FakeSandbox::FakeSandbox(FakeSandboxOptions options) : options_(std::move(options)) {}

FakeSandbox::~FakeSandbox() = default;

void FakeSandbox::add_rule(std::string match, ExecResult result)
{
    std::lock_guard lock(mu_);
    options_.rules.push_back(FakeRule{std::move(match), std::move(result)});
}

void FakeSandbox::add_fault(std::string match, SandboxErrorKind kind)
{
    std::lock_guard lock(mu_);
    options_.rules.push_back(FakeRule{std::move(match), kind});
}

SessionId FakeSandbox::create_session(const SandboxInit& init)
{
    auto session = std::make_shared<Session>();
    session->caps = init.caps;
    for (std::size_t k = 0; k < init.images.size(); ++k) {
        const auto dims = try_png_dimensions(init.images[k]);
        if (!dims) throw SandboxError(SandboxErrorKind::InitFailure, fmt::format("image_clue_{} is not a decodable PNG", k));
        session->ns[fmt::format("image_clue_{}", k)] = Value::image(K::Image, dims->width, dims->height);
    }
    std::lock_guard lock(mu_);
    if (init.video) {
        if (init.video->reference.empty() || options_.unreadable_videos.count(init.video->reference))
            throw SandboxError(SandboxErrorKind::InitFailure,
                               fmt::format("cannot open video '{}'", init.video->reference));
        auto video = Value::image(K::Video, options_.video_width, options_.video_height);
        video.i = options_.video_frames;
        if (init.video->max_frames_cap > 0) video.i = std::min<std::int64_t>(video.i, init.video->max_frames_cap);
        video.f = options_.video_fps;
        session->ns["video_clue_0"] = video;
    }
    auto id = fmt::format("fake-{}", next_id_++);
    sessions_[id] = std::move(session);
    close_counts_[id] = 0;
    return id;
}

ExecResult FakeSandbox::execute(const SessionId& id, const std::string& code, std::chrono::milliseconds timeout)
{
    std::shared_ptr<Session> session;
    std::vector<FakeRule> rules;
    {
        std::lock_guard lock(mu_);
        const auto it = sessions_.find(id);
        if (it == sessions_.end()) throw SandboxError(SandboxErrorKind::SessionDead, "unknown or closed session " + id);
        session = it->second;
        rules = options_.rules;
    }
    std::lock_guard session_lock(session->mu);
    if (session->dead) throw SandboxError(SandboxErrorKind::SessionDead, "session " + id + " is dead");

    for (const auto& rule : rules) {
        if (code.find(rule.match) == std::string::npos) continue;
        if (const auto* kind = std::get_if<SandboxErrorKind>(&rule.outcome)) {
            if (*kind == SandboxErrorKind::SessionDead) session->dead = true;
            throw SandboxError(*kind, fmt::format("injected {} fault", to_string(*kind)));
        }
        return std::get<ExecResult>(rule.outcome);
    }

    ExecContext ex(session->ns, options_, session->caps, timeout.count());
    ExecResult result;
    try {
        const auto lines = logical_lines(code);
        std::size_t idx = 0;
        const auto program = build_block(lines, idx, lines.empty() ? 0 : lines.front().indent);
        if (idx != lines.size()) throw PyException{"IndentationError", "unindent does not match any outer indentation level"};
        run_block(ex, program);
    } catch (const PyException& e) {
        result.error = traceback(ex.line, e);
    } catch (const BreakSignal&) {
        result.error = traceback(ex.line, PyException{"SyntaxError", "'break' outside loop"});
    } catch (const ContinueSignal&) {
        result.error = traceback(ex.line, PyException{"SyntaxError", "'continue' not properly in loop"});
    } catch (const SandboxError&) {
        if (ex.process_exit) session->dead = true;
        throw;
    }
    if (static_cast<int>(ex.images.size()) > session->caps.max_images_per_exec)
        throw SandboxError(SandboxErrorKind::ImageLimitExceeded,
                           fmt::format("{} images exceed the per-execution cap of {}", ex.images.size(),
                                       session->caps.max_images_per_exec));
    result.stdout_text = std::move(ex.out);
    result.images = std::move(ex.images);
    result.display_hook_invoked = ex.hook;
    result.duration_ms = ex.elapsed_ms;
    return result;
}

void FakeSandbox::close_session(const SessionId& id) noexcept
{
    std::lock_guard lock(mu_);
    if (auto it = close_counts_.find(id); it != close_counts_.end()) ++it->second;
    sessions_.erase(id);
}

int FakeSandbox::sessions_created() const
{
    std::lock_guard lock(mu_);
    return next_id_;
}

int FakeSandbox::open_sessions() const
{
    std::lock_guard lock(mu_);
    return static_cast<int>(sessions_.size());
}

std::map<SessionId, int> FakeSandbox::close_counts() const
{
    std::lock_guard lock(mu_);
    return close_counts_;
}

} // namespace pvrl
