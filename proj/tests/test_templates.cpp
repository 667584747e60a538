#include <gtest/gtest.h>

#include <fstream>

#include "generators.hpp"
#include "personakit/error.hpp"
#include "personakit/templates.hpp"

using namespace personakit;
using namespace personakit::templates;

TEST(Templates, SubstitutesIdentifiers) {
    EXPECT_EQ(render("Hi {name}, {name}!", {{"name", "Ann"}}), "Hi Ann, Ann!");
}

TEST(Templates, NonIdentifierBracesAreLiteral) {
    EXPECT_EQ(render("[{'model': x}] {} {1a} { x }", {}), "[{'model': x}] {} {1a} { x }");
}

TEST(Templates, UnknownIdentifierIsConfigError) {
    try {
        render("{missing}", {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    }
}

TEST(Templates, BuiltinsRenderWithTheirVariables) {
    const auto set = TemplateSet::builtin();
    const Vars gen_vars{{"agent_name", "Ann"}, {"stage_note", "youth"}, {"text", "passage"}};
    for (auto name : {kRaiseQuestion, kRaiseOpinion, kRaiseInduced, kGenerationInput}) {
        const auto out = set.render(name, gen_vars);
        EXPECT_EQ(out.find("{agent_name"), std::string::npos) << name;
    }
    EXPECT_NE(set.render(kRaiseInduced, gen_vars).find("Ann"), std::string::npos);
    EXPECT_FALSE(set.get(kFormatReminder).empty());
    EXPECT_FALSE(set.get(kJudgeReminder).empty());
    EXPECT_THROW(set.get("nope"), Error);
}

TEST(Templates, OverridesReplaceBuiltins) {
    gen::TempDir dir("tmpl");
    std::ofstream(dir.path() / "respond.txt") << "custom {agent_name}";
    const auto set = TemplateSet::with_overrides(dir.path());
    EXPECT_EQ(set.render(kRespond, {{"agent_name", "Z"}}), "custom Z");
    EXPECT_EQ(set.get(kJudge), TemplateSet::builtin().get(kJudge));
}
