#include "planwrite/cli.hpp"

int main(int argc, char** argv) { return planwrite::run_cli(argc, argv); }
