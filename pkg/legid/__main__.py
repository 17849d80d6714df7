from legid.cli import app

app(prog_name="legid")
