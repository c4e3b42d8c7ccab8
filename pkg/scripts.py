import os
import subprocess
import sys


def test(args=sys.argv):
    subprocess.check_call(["pytest"] + args[1:])


def lint(args=sys.argv):
    report_command = ""
    if "report" in args:
        os.path.exists("reports") or os.makedirs("reports")
        report_command = " --output-format concise -o reports/lint-report.txt"

    # os.system so lint keeps going and reports every error
    os.system("ruff check src tests scripts.py" + report_command)


def lint_fix():
    print("\n👉 RUFF")
    os.system("ruff check src tests scripts.py --fix")
    os.system("ruff format src tests scripts.py")
