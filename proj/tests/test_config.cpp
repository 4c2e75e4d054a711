#include "trajlab/config.hpp"

#include "trajlab/errors.hpp"
#include "trajlab/io.hpp"

#include <doctest.h>

using namespace trajlab;

TEST_CASE("sections, comments and repeated keys") {
    const char* text = R"(# a comment
[alpha]
x = 1
y = hello world
; another comment
[beta]
x = 2
item = first
item = second
)";
    auto cfg = ConfigFile::parse(text);
    CHECK(cfg.require("alpha", "x") == "1");
    CHECK(cfg.require("alpha", "y") == "hello world");
    CHECK(cfg.require("beta", "x") == "2");
    CHECK(cfg.get_all("beta", "item") == std::vector<std::string>{"first", "second"});
    CHECK(cfg.get("alpha", "missing") == std::nullopt);
    CHECK_THROWS_AS(cfg.require("alpha", "missing"), ConfigError);
}

TEST_CASE("numeric accessors") {
    auto cfg = ConfigFile::parse("[s]\nn = 42\nf = 2.5\n");
    CHECK(cfg.require_int("s", "n") == 42);
    CHECK(cfg.require_double("s", "f") == doctest::Approx(2.5));
    CHECK(cfg.get_int("s", "missing", 7) == 7);
    CHECK_THROWS_AS(cfg.require_int("s", "f2"), ConfigError);
}

TEST_CASE("malformed lines are rejected with line numbers") {
    CHECK_THROWS_AS(ConfigFile::parse("[unclosed\n"), ConfigError);
    CHECK_THROWS_AS(ConfigFile::parse("[s]\nno equals sign\n"), ConfigError);
    CHECK_THROWS_AS(ConfigFile::parse("[s]\n= value\n"), ConfigError);
}

TEST_CASE("last value wins for scalar lookups") {
    auto cfg = ConfigFile::parse("[s]\nk = first\nk = second\n");
    CHECK(cfg.require("s", "k") == "second");
}

TEST_CASE("number formatting round-trips") {
    for (double v : {0.0, 1.0, -3.25, 1e-9, 123456.789, 0.743}) {
        CHECK(parse_double(format_double(v)) == v);
    }
}
