#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>

namespace litevla {

// Wire token grammar:  <verb> "_" <decimal> "_" <decimal> "s"
// decimal := digit+ ("." digit+)?   -- no sign, no exponent, no whitespace.
enum class Verb { Forward, Backward, TurnLeft, TurnRight, Stop };

inline constexpr std::array<Verb, 5> kAllVerbs = {Verb::Forward, Verb::Backward, Verb::TurnLeft,
                                                  Verb::TurnRight, Verb::Stop};

std::string_view verb_name(Verb v);
std::optional<Verb> verb_from_name(std::string_view name);

struct ActionCommand {
    Verb verb = Verb::Stop;
    double magnitude = 0.0;  // m/s for translation, rad/s for turns
    double duration = 0.5;   // seconds

    bool operator==(const ActionCommand&) const = default;
};

// Linear/angular pair with Twist semantics (angular > 0 turns left).
struct VelocityCommand {
    double linear = 0.0;
    double angular = 0.0;
    double duration = 0.0;

    bool operator==(const VelocityCommand&) const = default;
};

struct SafetyCaps {
    double max_linear = 0.5;   // m/s
    double max_angular = 1.0;  // rad/s
};

struct ParseFailure {
    std::size_t offset = 0;
    std::string expected;
};

class ActionParseError : public std::invalid_argument {
public:
    explicit ActionParseError(ParseFailure f);
    std::size_t offset() const { return failure_.offset; }
    const std::string& expected() const { return failure_.expected; }

private:
    ParseFailure failure_;
};

class SafetyError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::variant<ActionCommand, ParseFailure> try_parse_action(std::string_view s);
ActionCommand parse_action(std::string_view s);

// Shortest round-trip decimal with at least one fractional digit.
std::string serialize_action(const ActionCommand& c);

VelocityCommand to_velocity(const ActionCommand& c, const SafetyCaps& caps = {});

}  // namespace litevla
