#include "lgdml/cli.hpp"

int main(int argc, char** argv) { return lgdml::cli_main(argc, argv); }
