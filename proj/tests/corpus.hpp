#pragma once

// Messy model answers and how each must parse.

#include <string>
#include <vector>

#include "quakesense/error.hpp"

namespace qs_test {

struct Case {
  const char* name;
  std::string raw;
  int level;                      // expected level; 0 when an error is expected
  quakesense::ErrorKind error{};  // expected error kind
};

inline std::vector<Case> messy_corpus() {
  return {
      {"plain", R"({"Reasoning":"far away","MMI":"III"})", 3},
      {"lowercase numeral", R"({"Reasoning":"r","MMI":"vii"})", 7},
      {"lowercase keys", R"({"reasoning":"r","mmi":"V"})", 5},
      {"json fence", "```json\n{\"Reasoning\": \"r\", \"MMI\": \"around IV to V\"}\n```", 4},
      {"bare fence", "```\n{\"Reasoning\": \"r\", \"MMI\": \"VI\"}\n```", 6},
      {"prose preamble", "Sure! Here is my assessment:\n{\"Reasoning\": \"r\", \"MMI\": \"VIII\"}\nHope it helps.", 8},
      {"phrase with prefix", R"({"Reasoning":"r","MMI":"MMI VII"})", 7},
      {"level word", R"j({"Reasoning":"r","MMI":"Level IX (violent)"})j", 9},
      {"range with dash", R"({"Reasoning":"r","MMI":"V-VI"})", 5},
      {"template layout",
       "{\n    \"Reasoning\": \"moderate shaking\"\n    \"MMI\": \"IV\",\n}", 4},
      {"braces inside reasoning", R"({"Reasoning":"a {curly} remark","MMI":"II"})", 2},
      {"second object wins when first is not JSON", "{not json at all} {\"Reasoning\":\"r\",\"MMI\":\"XII\"}", 12},
      {"numeric mmi", R"({"Reasoning":"r","MMI":7})", 0, quakesense::ErrorKind::Value},
      {"digits in string", R"({"Reasoning":"r","MMI":"7"})", 0, quakesense::ErrorKind::Value},
      {"beyond scale", R"({"Reasoning":"r","MMI":"XIII"})", 0, quakesense::ErrorKind::Value},
      {"malformed numeral", R"({"Reasoning":"r","MMI":"IIII"})", 0, quakesense::ErrorKind::Value},
      {"empty mmi", R"({"Reasoning":"r","MMI":""})", 0, quakesense::ErrorKind::Schema},
      {"missing reasoning", R"({"MMI":"V"})", 0, quakesense::ErrorKind::Schema},
      {"null mmi", R"({"Reasoning":"r","MMI":null})", 0, quakesense::ErrorKind::Schema},
      {"no json", "The intensity would be around VI.", 0, quakesense::ErrorKind::Parse},
  };
}

}  // namespace qs_test
