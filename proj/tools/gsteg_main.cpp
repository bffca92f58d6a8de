#include "gsteg/cli.hpp"

int main(int argc, char** argv) { return gsteg::run_cli(argc, argv); }
