#include "litevla/action_grammar.hpp"

#include <charconv>
#include <cmath>

namespace litevla {

namespace {

constexpr std::array<std::string_view, 5> kVerbNames = {"forward", "backward", "turn_left", "turn_right",
                                                        "stop"};

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Scans a decimal starting at `pos`; returns the end offset or a failure.
std::variant<std::size_t, ParseFailure> scan_decimal(std::string_view s, std::size_t pos) {
    std::size_t i = pos;
    if (i >= s.size() || !is_digit(s[i])) return ParseFailure{i, "digit"};
    while (i < s.size() && is_digit(s[i])) ++i;
    if (i < s.size() && s[i] == '.') {
        ++i;
        if (i >= s.size() || !is_digit(s[i])) return ParseFailure{i, "digit"};
        while (i < s.size() && is_digit(s[i])) ++i;
    }
    return i;
}

std::variant<double, ParseFailure> to_double(std::string_view s, std::size_t begin, std::size_t end) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data() + begin, s.data() + end, v);
    if (ec != std::errc() || ptr != s.data() + end || !std::isfinite(v)) {
        return ParseFailure{begin, "representable decimal"};
    }
    return v;
}

}  // namespace

std::string_view verb_name(Verb v) { return kVerbNames[static_cast<std::size_t>(v)]; }

std::optional<Verb> verb_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kVerbNames.size(); ++i) {
        if (kVerbNames[i] == name) return static_cast<Verb>(i);
    }
    return std::nullopt;
}

ActionParseError::ActionParseError(ParseFailure f)
    : std::invalid_argument("action string: expected " + f.expected + " at byte " + std::to_string(f.offset)),
      failure_(std::move(f)) {}

std::variant<ActionCommand, ParseFailure> try_parse_action(std::string_view s) {
    ActionCommand cmd;
    std::size_t pos = 0;
    bool matched = false;
    // Longest verb followed by '_' wins ("turn_left" before a hypothetical "turn").
    std::size_t best = 0;
    for (std::size_t i = 0; i < kVerbNames.size(); ++i) {
        const auto name = kVerbNames[i];
        if (s.size() > name.size() && s.substr(0, name.size()) == name && s[name.size()] == '_' &&
            name.size() > best) {
            best = name.size();
            cmd.verb = static_cast<Verb>(i);
            matched = true;
        }
    }
    if (!matched) return ParseFailure{0, "verb (forward|backward|turn_left|turn_right|stop)"};
    pos = best + 1;

    auto mag_end = scan_decimal(s, pos);
    if (auto* f = std::get_if<ParseFailure>(&mag_end)) return *f;
    auto mag = to_double(s, pos, std::get<std::size_t>(mag_end));
    if (auto* f = std::get_if<ParseFailure>(&mag)) return *f;
    cmd.magnitude = std::get<double>(mag);
    if (cmd.verb == Verb::Stop && cmd.magnitude != 0.0) return ParseFailure{pos, "zero magnitude for stop"};
    pos = std::get<std::size_t>(mag_end);

    if (pos >= s.size() || s[pos] != '_') return ParseFailure{pos, "\"_\""};
    ++pos;

    auto dur_end = scan_decimal(s, pos);
    if (auto* f = std::get_if<ParseFailure>(&dur_end)) return *f;
    auto dur = to_double(s, pos, std::get<std::size_t>(dur_end));
    if (auto* f = std::get_if<ParseFailure>(&dur)) return *f;
    cmd.duration = std::get<double>(dur);
    if (!(cmd.duration > 0.0)) return ParseFailure{pos, "positive duration"};
    pos = std::get<std::size_t>(dur_end);

    if (pos >= s.size() || s[pos] != 's') return ParseFailure{pos, "\"s\""};
    ++pos;
    if (pos != s.size()) return ParseFailure{pos, "end of input"};
    return cmd;
}

ActionCommand parse_action(std::string_view s) {
    auto r = try_parse_action(s);
    if (auto* f = std::get_if<ParseFailure>(&r)) throw ActionParseError(*f);
    return std::get<ActionCommand>(r);
}

namespace {

std::string render_decimal(double v) {
    char buf[400];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed);
    std::string out(buf, ptr);
    if (out.find('.') == std::string::npos) out += ".0";
    return out;
}

}  // namespace

std::string serialize_action(const ActionCommand& c) {
    std::string out(verb_name(c.verb));
    out += '_';
    out += render_decimal(c.magnitude);
    out += '_';
    out += render_decimal(c.duration);
    out += 's';
    return out;
}

VelocityCommand to_velocity(const ActionCommand& c, const SafetyCaps& caps) {
    const bool turning = c.verb == Verb::TurnLeft || c.verb == Verb::TurnRight;
    const double cap = turning ? caps.max_angular : caps.max_linear;
    if (c.magnitude < 0.0 || c.magnitude > cap) {
        throw SafetyError(std::string(verb_name(c.verb)) + " magnitude " + render_decimal(c.magnitude) +
                          " exceeds safety cap " + render_decimal(cap));
    }
    VelocityCommand v;
    v.duration = c.duration;
    switch (c.verb) {
        case Verb::Forward: v.linear = c.magnitude; break;
        case Verb::Backward: v.linear = -c.magnitude; break;
        case Verb::TurnLeft: v.angular = c.magnitude; break;
        case Verb::TurnRight: v.angular = -c.magnitude; break;
        case Verb::Stop: break;
    }
    return v;
}

}  // namespace litevla
