import pymysql

# Lets DATABASE_URL=mysql://... work without the C client library.
pymysql.install_as_MySQLdb()
