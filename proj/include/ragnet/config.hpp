#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ragnet {

// Key/value configuration in a small TOML subset:
//
//   file     := { line '\n' }
//   line     := blank | comment | section | pair
//   comment  := '#' any*
//   section  := '[' name ']'            keys below become "name.key"
//   pair     := key '=' value [comment]
//   key      := [A-Za-z0-9_-]+
//   value    := integer | float | 'true' | 'false' | string | list
//   string   := '"' chars '"'           escapes: \" \\ \n \t
//   list     := '[' [ value { ',' value } ] ']'
//
// A key may appear once. Values are type-checked when read.
class ConfigFile {
public:
    static ConfigFile parse(std::string_view text, std::string origin = "<config>");
    static ConfigFile load(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::vector<std::string> keys() const;

    std::optional<std::int64_t> get_int(const std::string& key) const;
    std::optional<double> get_double(const std::string& key) const;
    std::optional<bool> get_bool(const std::string& key) const;
    std::optional<std::string> get_string(const std::string& key) const;
    std::optional<std::vector<std::int64_t>> get_int_list(const std::string& key) const;

    // Throws ArgumentError naming the first key outside `known`.
    void reject_unknown(const std::vector<std::string>& known) const;

private:
    struct Value {
        std::string text;  // raw scalar text, or unquoted string
        bool quoted = false;
        bool is_list = false;
        std::vector<Value> items;
        int line = 0;
    };

    const Value* find(const std::string& key) const;
    [[noreturn]] void type_error(const std::string& key, const Value& v, const char* expected) const;

    std::string origin_;
    std::map<std::string, Value> values_;
};

}  // namespace ragnet
