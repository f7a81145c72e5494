#include "ragnet/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "ragnet/error.hpp"
#include "ragnet/fileio.hpp"

namespace ragnet {

namespace {

bool is_key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

class LineParser {
public:
    LineParser(std::string_view s, const std::string& origin, int line) : s_(s), origin_(origin), line_(line) {}

    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\r')) ++pos_;
    }
    bool at_end_or_comment() {
        skip_ws();
        return pos_ >= s_.size() || s_[pos_] == '#';
    }
    char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
    std::size_t pos() const { return pos_; }
    void advance() { ++pos_; }

    std::string name() {
        skip_ws();
        const std::size_t start = pos_;
        while (pos_ < s_.size() && (is_key_char(s_[pos_]) || s_[pos_] == '.')) ++pos_;
        if (pos_ == start) fail("expected a name");
        return std::string(s_.substr(start, pos_ - start));
    }

    void expect(char c) {
        skip_ws();
        if (peek() != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }

    template <typename V>
    V value(int depth) {
        skip_ws();
        V v;
        v.line = line_;
        if (peek() == '[') {
            if (depth > 0) fail("nested lists are not supported");
            ++pos_;
            v.is_list = true;
            skip_ws();
            if (peek() == ']') {
                ++pos_;
                return v;
            }
            while (true) {
                v.items.push_back(value<V>(depth + 1));
                skip_ws();
                if (peek() == ',') {
                    ++pos_;
                    continue;
                }
                if (peek() == ']') {
                    ++pos_;
                    return v;
                }
                fail("expected ',' or ']' in list");
            }
        }
        if (peek() == '"') {
            ++pos_;
            v.quoted = true;
            while (true) {
                if (pos_ >= s_.size()) fail("unterminated string");
                const char c = s_[pos_++];
                if (c == '"') break;
                if (c == '\\') {
                    if (pos_ >= s_.size()) fail("unterminated escape");
                    const char e = s_[pos_++];
                    switch (e) {
                        case '"': v.text += '"'; break;
                        case '\\': v.text += '\\'; break;
                        case 'n': v.text += '\n'; break;
                        case 't': v.text += '\t'; break;
                        default: fail(std::string("unknown escape \\") + e);
                    }
                } else {
                    v.text += c;
                }
            }
            return v;
        }
        const std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.' ||
                                    s_[pos_] == '-' || s_[pos_] == '+' || s_[pos_] == '_')) {
            ++pos_;
        }
        if (pos_ == start) fail("expected a value");
        v.text = std::string(s_.substr(start, pos_ - start));
        return v;
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw ArgumentError(origin_ + ":" + std::to_string(line_) + ":" + std::to_string(pos_ + 1) + ": " + msg);
    }

private:
    std::string_view s_;
    const std::string& origin_;
    int line_;
    std::size_t pos_ = 0;
};

bool parse_int(const std::string& s, std::int64_t& out) {
    std::string_view t = s;
    if (!t.empty() && t[0] == '+') t.remove_prefix(1);
    std::string cleaned;
    for (char c : t) {
        if (c != '_') cleaned += c;
    }
    const auto* end = cleaned.data() + cleaned.size();
    auto [p, ec] = std::from_chars(cleaned.data(), end, out);
    return ec == std::errc() && p == end && !cleaned.empty();
}

bool parse_double(const std::string& s, double& out) {
    std::string cleaned;
    for (char c : s) {
        if (c != '_') cleaned += c;
    }
    if (!cleaned.empty() && cleaned[0] == '+') cleaned.erase(0, 1);
    const auto* end = cleaned.data() + cleaned.size();
    auto [p, ec] = std::from_chars(cleaned.data(), end, out);
    return ec == std::errc() && p == end && !cleaned.empty();
}

}  // namespace

ConfigFile ConfigFile::parse(std::string_view text, std::string origin) {
    ConfigFile cfg;
    cfg.origin_ = std::move(origin);
    std::string section;
    int line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t nl = text.find('\n', start);
        const std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
        ++line_no;
        LineParser p(line, cfg.origin_, line_no);
        if (!p.at_end_or_comment()) {
            if (p.peek() == '[') {
                p.advance();
                section = p.name();
                p.expect(']');
            } else {
                std::string key = p.name();
                if (key.find('.') != std::string::npos) p.fail("dotted keys are not supported; use a [section]");
                if (!section.empty()) key = section + "." + key;
                p.expect('=');
                auto v = p.value<Value>(0);
                if (cfg.values_.count(key)) p.fail("duplicate key '" + key + "'");
                cfg.values_.emplace(key, std::move(v));
            }
            if (!p.at_end_or_comment()) p.fail("unexpected trailing characters");
        }
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    return cfg;
}

ConfigFile ConfigFile::load(const std::string& path) {
    const auto bytes = read_file(path);
    return parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path);
}

std::vector<std::string> ConfigFile::keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
}

const ConfigFile::Value* ConfigFile::find(const std::string& key) const {
    const auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
}

void ConfigFile::type_error(const std::string& key, const Value& v, const char* expected) const {
    throw ArgumentError(origin_ + ":" + std::to_string(v.line) + ": key '" + key + "' must be " + expected +
                        (v.is_list ? ", found a list" : ", found '" + v.text + "'"));
}

std::optional<std::int64_t> ConfigFile::get_int(const std::string& key) const {
    const Value* v = find(key);
    if (!v) return std::nullopt;
    std::int64_t out = 0;
    if (v->is_list || v->quoted || !parse_int(v->text, out)) type_error(key, *v, "an integer");
    return out;
}

std::optional<double> ConfigFile::get_double(const std::string& key) const {
    const Value* v = find(key);
    if (!v) return std::nullopt;
    double out = 0;
    if (v->is_list || v->quoted || !parse_double(v->text, out)) type_error(key, *v, "a number");
    return out;
}

std::optional<bool> ConfigFile::get_bool(const std::string& key) const {
    const Value* v = find(key);
    if (!v) return std::nullopt;
    if (v->is_list || v->quoted || (v->text != "true" && v->text != "false")) type_error(key, *v, "true or false");
    return v->text == "true";
}

std::optional<std::string> ConfigFile::get_string(const std::string& key) const {
    const Value* v = find(key);
    if (!v) return std::nullopt;
    if (v->is_list || !v->quoted) type_error(key, *v, "a quoted string");
    return v->text;
}

std::optional<std::vector<std::int64_t>> ConfigFile::get_int_list(const std::string& key) const {
    const Value* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_list) type_error(key, *v, "a list of integers");
    std::vector<std::int64_t> out;
    for (const auto& item : v->items) {
        std::int64_t x = 0;
        if (item.quoted || !parse_int(item.text, x)) type_error(key, item, "a list of integers");
        out.push_back(x);
    }
    return out;
}

void ConfigFile::reject_unknown(const std::vector<std::string>& known) const {
    for (const auto& [k, v] : values_) {
        if (std::find(known.begin(), known.end(), k) == known.end()) {
            throw ArgumentError(origin_ + ":" + std::to_string(v.line) + ": unknown key '" + k + "'");
        }
    }
}

}  // namespace ragnet
