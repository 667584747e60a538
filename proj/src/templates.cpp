#include "personakit/templates.hpp"

#include <cctype>

#include <fmt/format.h>

#include "personakit/error.hpp"
#include "personakit/util.hpp"

namespace personakit::templates {

const std::map<std::string, std::string>& builtin_table();

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

}  // namespace

std::string render(std::string_view tmpl, const Vars& vars) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{' && i + 1 < tmpl.size() && ident_start(tmpl[i + 1])) {
            std::size_t j = i + 1;
            while (j < tmpl.size() && ident_char(tmpl[j])) ++j;
            if (j < tmpl.size() && tmpl[j] == '}') {
                const auto name = tmpl.substr(i + 1, j - i - 1);
                const auto it = vars.find(name);
                if (it == vars.end())
                    throw Error(ErrorCode::ConfigError, fmt::format("template placeholder {{{}}} has no value", name));
                out += it->second;
                i = j + 1;
                continue;
            }
        }
        out += tmpl[i++];
    }
    return out;
}

TemplateSet TemplateSet::builtin() {
    TemplateSet set;
    for (const auto& [name, body] : builtin_table()) set.table_.emplace(name, body);
    return set;
}

TemplateSet TemplateSet::with_overrides(const std::filesystem::path& dir) {
    auto set = builtin();
    if (!std::filesystem::is_directory(dir))
        throw Error(ErrorCode::ConfigError, fmt::format("template directory '{}' not found", dir.string()));
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".txt") continue;
        set.table_.insert_or_assign(entry.path().stem().string(), read_text(entry.path()));
    }
    return set;
}

const std::string& TemplateSet::get(std::string_view name) const {
    const auto it = table_.find(name);
    if (it == table_.end()) throw Error(ErrorCode::ConfigError, fmt::format("no template named '{}'", name));
    return it->second;
}

std::string TemplateSet::render(std::string_view name, const Vars& vars) const {
    return templates::render(get(name), vars);
}

}  // namespace personakit::templates
