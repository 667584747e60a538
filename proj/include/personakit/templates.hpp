#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace personakit::templates {

// Template names (file stems under data/templates).
inline constexpr std::string_view kRaiseQuestion = "raise_question";
inline constexpr std::string_view kRaiseOpinion = "raise_opinion";
inline constexpr std::string_view kRaiseInduced = "raise_induced";
inline constexpr std::string_view kGenerationInput = "generation_input";
inline constexpr std::string_view kRespond = "respond";
inline constexpr std::string_view kFormatReminder = "format_reminder";
inline constexpr std::string_view kJudge = "judge";
inline constexpr std::string_view kJudgeReminder = "judge_reminder";

using Vars = std::map<std::string, std::string, std::less<>>;

// Placeholders are {identifier} with identifier = [A-Za-z_][A-Za-z0-9_]*.
// Any other brace text is literal. Unknown identifiers raise ConfigError.
std::string render(std::string_view tmpl, const Vars& vars);

class TemplateSet {
public:
    // Templates compiled into the library from data/templates.
    static TemplateSet builtin();
    // Built-ins overridden by any <name>.txt found in `dir`.
    static TemplateSet with_overrides(const std::filesystem::path& dir);

    const std::string& get(std::string_view name) const;
    std::string render(std::string_view name, const Vars& vars) const;

private:
    std::map<std::string, std::string, std::less<>> table_;
};

}  // namespace personakit::templates
