#include <set>

#include "doctest.h"
#include "litevla/action_grammar.hpp"
#include "litevla/rng.hpp"

using namespace litevla;

namespace {

std::string random_decimal(Rng& rng) {
    std::string s = std::to_string(rng.below(1000));
    if (rng.bernoulli(0.8)) {
        s += '.';
        const auto digits = 1 + rng.below(6);
        for (std::uint64_t i = 0; i < digits; ++i) s += static_cast<char>('0' + rng.below(10));
    }
    return s;
}

}  // namespace

TEST_CASE("example strings") {
    CHECK(parse_action("forward_0.2_3.0s") == ActionCommand{Verb::Forward, 0.2, 3.0});
    CHECK(parse_action("turn_left_0.1_2.5s") == ActionCommand{Verb::TurnLeft, 0.1, 2.5});
    CHECK(parse_action("backward_0.2_3.0s").verb == Verb::Backward);
    CHECK(serialize_action({Verb::Forward, 0.2, 3.0}) == "forward_0.2_3.0s");
    CHECK(serialize_action({Verb::Stop, 0.0, 0.5}) == "stop_0.0_0.5s");
    CHECK(serialize_action({Verb::TurnRight, 1.0, 2.0}) == "turn_right_1.0_2.0s");
}

TEST_CASE("errors report offset and expectation") {
    auto fail = [](std::string_view s) {
        auto r = try_parse_action(s);
        REQUIRE(std::holds_alternative<ParseFailure>(r));
        return std::get<ParseFailure>(r);
    };
    auto f = fail("forward_0.2_3.0");
    CHECK(f.offset == 15);
    CHECK(f.expected == "\"s\"");
    CHECK(fail("").offset == 0);
    CHECK(fail("Forward_0.2_3.0s").offset == 0);
    CHECK(fail("forward_-0.2_3.0s").offset == 8);
    CHECK(fail("forward_0.2_3.0s ").offset == 16);
    CHECK(fail("forward_.2_3.0s").offset == 8);
    CHECK(fail("forward_0._3.0s").offset == 10);
    CHECK(fail("forward_0.2 3.0s").offset == 11);
    CHECK(fail("forward_0.2_1e3s").offset == 13);
    CHECK(fail("forward_0.2_0.0s").expected == "positive duration");
    CHECK(fail("stop_0.1_0.5s").expected == "zero magnitude for stop");
    CHECK_THROWS_AS(parse_action("turn_0.1_1.0s"), ActionParseError);
    try {
        parse_action("forward_0.2_3.0");
        FAIL("expected throw");
    } catch (const ActionParseError& e) {
        CHECK(e.offset() == 15);
    }
}

TEST_CASE("round trips on fuzzed commands") {
    Rng rng(42);
    for (int i = 0; i < 10000; ++i) {
        ActionCommand c;
        c.verb = kAllVerbs[rng.below(5)];
        c.magnitude = c.verb == Verb::Stop ? 0.0 : rng.uniform(0.0, 2.0);
        c.duration = rng.uniform(1e-3, 30.0);
        const std::string s = serialize_action(c);
        REQUIRE(parse_action(s) == c);
        // canonical strings survive the other direction too
        REQUIRE(serialize_action(parse_action(s)) == s);
        const std::string d = std::string(verb_name(c.verb)) + "_" +
                              (c.verb == Verb::Stop ? std::string("0.0") : random_decimal(rng)) + "_" + "1" +
                              random_decimal(rng) + "s";
        REQUIRE(parse_action(serialize_action(parse_action(d))) == parse_action(d));
    }
}

TEST_CASE("arbitrary bytes yield a command or a typed failure") {
    Rng rng(7);
    const std::string alphabet = "forwadbckug_lestip0123456789.s _-eE";
    std::size_t parsed = 0;
    for (int i = 0; i < 1'000'000; ++i) {
        std::string s(rng.below(24), '\0');
        const bool raw = rng.bernoulli(0.5);
        for (auto& ch : s) ch = raw ? static_cast<char>(rng.below(256)) : alphabet[rng.below(alphabet.size())];
        if (rng.bernoulli(0.3)) s = std::string(verb_name(kAllVerbs[rng.below(5)])) + "_" + s;
        auto r = try_parse_action(s);
        if (std::holds_alternative<ActionCommand>(r)) {
            ++parsed;
        } else {
            REQUIRE(std::get<ParseFailure>(r).offset <= s.size());
        }
    }
    CHECK(parsed < 1'000'000);
}

TEST_CASE("velocity mapping") {
    CHECK(to_velocity({Verb::Forward, 0.2, 3.0}) == VelocityCommand{0.2, 0.0, 3.0});
    CHECK(to_velocity({Verb::Backward, 0.2, 3.0}) == VelocityCommand{-0.2, 0.0, 3.0});
    CHECK(to_velocity({Verb::TurnLeft, 0.1, 2.5}) == VelocityCommand{0.0, 0.1, 2.5});
    CHECK(to_velocity({Verb::TurnRight, 0.1, 2.5}) == VelocityCommand{0.0, -0.1, 2.5});
    CHECK(to_velocity({Verb::Stop, 0.0, 0.5}) == VelocityCommand{0.0, 0.0, 0.5});
    CHECK_THROWS_AS(to_velocity({Verb::Forward, 0.6, 1.0}), SafetyError);
    CHECK_THROWS_AS(to_velocity({Verb::TurnLeft, 1.5, 1.0}), SafetyError);
    CHECK_NOTHROW(to_velocity({Verb::TurnLeft, 1.5, 1.0}, SafetyCaps{0.5, 2.0}));

    std::set<std::pair<double, double>> seen;
    for (Verb v : kAllVerbs) {
        if (v == Verb::Stop) continue;
        const auto vc = to_velocity({v, 0.3, 1.0});
        seen.insert({vc.linear, vc.angular});
    }
    CHECK(seen.size() == 4);
}

TEST_CASE("verb names") {
    for (Verb v : kAllVerbs) CHECK(verb_from_name(verb_name(v)) == v);
    CHECK_FALSE(verb_from_name("left").has_value());
}
